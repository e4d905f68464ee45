//! Multi-temporal raster toolkit built around a spatiotemporal bilateral filter.
//!
//! The pipeline registers and radiometrically normalizes a stack of co-registered dates,
//! filters it with spatial, range and temporal weights, classifies each date with a
//! one-vs-all RBF SVM (trained per date or once on a reference date), and scores the
//! class maps against ground-truth masks.

pub mod eval;
pub mod filter;
pub mod pipeline;
pub mod radiometry;
pub mod raster;
pub mod registration;
pub mod svm;

pub use filter::{filter_stack, FilterParams};
pub use raster::{LabelMask, Raster, RasterStack};
