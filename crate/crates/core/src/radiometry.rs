//! Coarse per-band linear radiometric normalization against a reference date.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::{Raster, RasterError};

const DEGENERATE_STD: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum RadiometryError {
    #[error("reference is {reference}, target is {target}")]
    ShapeMismatch { reference: String, target: String },
    #[error("model has {model} bands, raster has {raster}")]
    BandMismatch { model: usize, raster: usize },
    #[error("band {band}: gain {gain} must be finite and positive")]
    InvalidGain { band: usize, gain: f64 },
    #[error(transparent)]
    Raster(#[from] RasterError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandGain {
    pub gain: f64,
    pub offset: f64,
}

/// One `gain * s + offset` map per band. Serializes as `{"bands":[{"gain":..,"offset":..},..]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearGainOffset {
    bands: Vec<BandGain>,
}

impl LinearGainOffset {
    pub fn new(bands: Vec<BandGain>) -> Result<Self, RadiometryError> {
        for (band, b) in bands.iter().enumerate() {
            if !(b.gain.is_finite() && b.gain > 0.0) || !b.offset.is_finite() {
                return Err(RadiometryError::InvalidGain { band, gain: b.gain });
            }
        }
        Ok(Self { bands })
    }

    pub fn identity(bands: usize) -> Self {
        Self {
            bands: vec![
                BandGain {
                    gain: 1.0,
                    offset: 0.0
                };
                bands
            ],
        }
    }

    pub fn bands(&self) -> &[BandGain] {
        &self.bands
    }
}

/// Mean and population standard deviation, accumulated row-major in f64.
pub fn band_moments(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Per band: `gain = sd_ref / sd_tgt`, `offset = mean_ref - gain * mean_tgt`.
/// A constant target band gets `gain = 1`, `offset = mean_ref - mean_tgt`.
pub fn fit_linear_normalization(
    reference: &Raster,
    target: &Raster,
) -> Result<LinearGainOffset, RadiometryError> {
    if !reference.same_shape(target) {
        let shape = |r: &Raster| format!("{}x{}x{}", r.width(), r.height(), r.bands());
        return Err(RadiometryError::ShapeMismatch {
            reference: shape(reference),
            target: shape(target),
        });
    }
    let bands = (0..reference.bands())
        .map(|b| {
            let (mu_ref, sd_ref) = band_moments(reference.band(b));
            let (mu_tgt, sd_tgt) = band_moments(target.band(b));
            if sd_tgt < DEGENERATE_STD || sd_ref < DEGENERATE_STD {
                BandGain {
                    gain: 1.0,
                    offset: mu_ref - mu_tgt,
                }
            } else {
                let gain = sd_ref / sd_tgt;
                BandGain {
                    gain,
                    offset: mu_ref - gain * mu_tgt,
                }
            }
        })
        .collect();
    LinearGainOffset::new(bands)
}

pub fn apply_linear_normalization(
    raster: &Raster,
    model: &LinearGainOffset,
) -> Result<Raster, RadiometryError> {
    if model.bands.len() != raster.bands() {
        return Err(RadiometryError::BandMismatch {
            model: model.bands.len(),
            raster: raster.bands(),
        });
    }
    let n = raster.pixel_count();
    let mut samples = raster.samples().to_vec();
    for (b, chunk) in samples.chunks_mut(n).enumerate() {
        let BandGain { gain, offset } = model.bands[b];
        if gain == 1.0 && offset == 0.0 {
            continue;
        }
        chunk.iter_mut().for_each(|s| *s = gain * *s + offset);
    }
    Ok(Raster::new(
        raster.width(),
        raster.height(),
        raster.bands(),
        samples,
        raster.date_tag(),
    )?)
}
