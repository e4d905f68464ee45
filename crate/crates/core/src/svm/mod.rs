//! RBF-kernel support vector machines: SMO training, one-vs-all multiclass models,
//! per-pixel classification.

pub mod smo;

use std::collections::HashMap;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::{LabelMask, Raster, RasterError};

pub use smo::{kkt_residual, BinarySolution, Gram, SmoSettings};

#[derive(Debug, Error)]
pub enum SvmError {
    #[error("invalid SVM parameters: {0}")]
    InvalidParams(String),
    #[error("feature dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("class {class} has no training samples")]
    MissingClass { class: u8 },
    #[error("need at least two classes, found {0}")]
    TooFewClasses(usize),
    #[error("training set is empty")]
    Empty,
    #[error("binary problem needs both labels present")]
    SingleSign,
    #[error("mask is {mask}, image is {image}")]
    MaskMismatch { mask: String, image: String },
    #[error("malformed model: {0}")]
    Model(String),
    #[error(transparent)]
    Raster(#[from] RasterError),
}

pub type Result<T> = std::result::Result<T, SvmError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvmParams {
    #[serde(rename = "C")]
    pub c: f64,
    /// RBF `gamma = 1/(2σ²)`; `None` means `1 / feature count`.
    pub gamma: Option<f64>,
    pub tol: f64,
    pub max_passes: usize,
    pub sample_per_class: usize,
    pub seed: u64,
}

impl Default for SvmParams {
    fn default() -> Self {
        Self {
            c: 10.0,
            gamma: None,
            tol: 1e-3,
            max_passes: 1000,
            sample_per_class: 500,
            seed: 0,
        }
    }
}

impl SvmParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SvmError::InvalidParams(m));
        if !(self.c.is_finite() && self.c > 0.0) {
            return bad(format!("C must be > 0, got {}", self.c));
        }
        if let Some(g) = self.gamma {
            if !(g.is_finite() && g > 0.0) {
                return bad(format!("gamma must be > 0, got {g}"));
            }
        }
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return bad(format!("tol must be > 0, got {}", self.tol));
        }
        if self.max_passes == 0 || self.sample_per_class == 0 {
            return bad("max_passes and sample_per_class must be positive".into());
        }
        Ok(())
    }

    pub fn gamma_for(&self, dims: usize) -> f64 {
        self.gamma.unwrap_or(1.0 / dims as f64)
    }

    fn smo(&self, seed: u64) -> SmoSettings {
        SmoSettings {
            c: self.c,
            tol: self.tol,
            max_passes: self.max_passes,
            seed,
        }
    }
}

/// Labeled feature vectors; labels are class IDs `1..=K`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    features: Vec<Vec<f64>>,
    labels: Vec<u8>,
    /// Pixel index each sample came from, when drawn from an image.
    origins: Vec<usize>,
}

impl TrainingSet {
    pub fn new(features: Vec<Vec<f64>>, labels: Vec<u8>) -> Result<Self> {
        let origins = (0..features.len()).collect();
        Self::with_origins(features, labels, origins)
    }

    fn with_origins(features: Vec<Vec<f64>>, labels: Vec<u8>, origins: Vec<usize>) -> Result<Self> {
        if features.is_empty() {
            return Err(SvmError::Empty);
        }
        if features.len() != labels.len() {
            return Err(SvmError::InvalidParams(format!(
                "{} feature vectors but {} labels",
                features.len(),
                labels.len()
            )));
        }
        let dims = features[0].len();
        if dims == 0 {
            return Err(SvmError::InvalidParams("zero-length feature vectors".into()));
        }
        for f in &features {
            if f.len() != dims {
                return Err(SvmError::DimensionMismatch {
                    expected: dims,
                    found: f.len(),
                });
            }
            if f.iter().any(|v| !v.is_finite()) {
                return Err(SvmError::InvalidParams("non-finite feature".into()));
            }
        }
        if labels.contains(&0) {
            return Err(SvmError::InvalidParams("class ID 0 is reserved for unlabeled".into()));
        }
        Ok(Self {
            features,
            labels,
            origins,
        })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.features[0].len()
    }

    pub fn features(&self) -> &[Vec<f64>] {
        &self.features
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn origins(&self) -> &[usize] {
        &self.origins
    }

    /// `K`, after checking every class `1..=K` occurs.
    pub fn class_count(&self) -> Result<u8> {
        let k = *self.labels.iter().max().unwrap();
        let mut present = vec![false; k as usize + 1];
        for &l in &self.labels {
            present[l as usize] = true;
        }
        if let Some(class) = (1..=k).find(|&c| !present[c as usize]) {
            return Err(SvmError::MissingClass { class });
        }
        if k < 2 {
            return Err(SvmError::TooFewClasses(k as usize));
        }
        Ok(k)
    }
}

/// Draws up to `sample_per_class` labeled pixels per class, uniformly without replacement.
///
/// The draw depends only on the mask and the seed, so the same pixels are selected from
/// any image sharing the mask.
pub fn sample_training(image: &Raster, mask: &LabelMask, params: &SvmParams) -> Result<TrainingSet> {
    params.validate()?;
    if !mask.same_dims(image) {
        return Err(SvmError::MaskMismatch {
            mask: format!("{}x{}", mask.width(), mask.height()),
            image: format!("{}x{}", image.width(), image.height()),
        });
    }
    let k = mask.max_class();
    if k < 2 {
        return Err(SvmError::TooFewClasses(k as usize));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); k as usize + 1];
    for (i, &l) in mask.labels().iter().enumerate() {
        by_class[l as usize].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut origins = Vec::new();
    for class in 1..=k {
        let pixels = &by_class[class as usize];
        if pixels.is_empty() {
            return Err(SvmError::MissingClass { class });
        }
        let chosen: Vec<usize> = if pixels.len() <= params.sample_per_class {
            pixels.clone()
        } else {
            let mut picks = index::sample(&mut rng, pixels.len(), params.sample_per_class).into_vec();
            picks.sort_unstable();
            picks.into_iter().map(|i| pixels[i]).collect()
        };
        for idx in chosen {
            let (x, y) = (idx % image.width(), idx / image.width());
            features.push(image.pixel(x, y));
            labels.push(class);
            origins.push(idx);
        }
    }
    TrainingSet::with_origins(features, labels, origins)
}

#[inline]
pub(crate) fn rbf_kernel_unchecked(x: &[f64], z: &[f64], gamma: f64) -> f64 {
    let d2: f64 = x.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum();
    (-gamma * d2).exp()
}

/// `exp(-gamma ‖x - z‖²)`.
pub fn rbf_kernel(x: &[f64], z: &[f64], gamma: f64) -> Result<f64> {
    if x.len() != z.len() {
        return Err(SvmError::DimensionMismatch {
            expected: x.len(),
            found: z.len(),
        });
    }
    Ok(rbf_kernel_unchecked(x, z, gamma))
}

/// Dual expansion `Σ coef_i K(sv_i, x) + b` of one binary problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryModel {
    #[serde(rename = "sv")]
    pub support_vectors: Vec<Vec<f64>>,
    /// `α_i y_i` per support vector.
    #[serde(rename = "coef")]
    pub dual_coeffs: Vec<f64>,
    #[serde(rename = "b")]
    pub bias: f64,
    #[serde(skip)]
    pub gamma: f64,
}

impl BinaryModel {
    pub fn decision_value(&self, x: &[f64]) -> Result<f64> {
        if let Some(sv) = self.support_vectors.first() {
            if sv.len() != x.len() {
                return Err(SvmError::DimensionMismatch {
                    expected: sv.len(),
                    found: x.len(),
                });
            }
        }
        Ok(self.decision_unchecked(x))
    }

    fn decision_unchecked(&self, x: &[f64]) -> f64 {
        self.support_vectors
            .iter()
            .zip(&self.dual_coeffs)
            .map(|(sv, c)| c * rbf_kernel_unchecked(sv, x, self.gamma))
            .sum::<f64>()
            + self.bias
    }
}

/// Trains one binary SVM on features with labels `±1`.
pub fn train_binary(features: &[Vec<f64>], labels: &[f64], params: &SvmParams) -> Result<BinarySolution> {
    params.validate()?;
    if features.is_empty() {
        return Err(SvmError::Empty);
    }
    if features.len() != labels.len() || labels.iter().any(|&l| l != 1.0 && l != -1.0) {
        return Err(SvmError::InvalidParams("labels must be ±1, one per feature".into()));
    }
    if !(labels.contains(&1.0) && labels.contains(&-1.0)) {
        return Err(SvmError::SingleSign);
    }
    let dims = features[0].len();
    if let Some(f) = features.iter().find(|f| f.len() != dims) {
        return Err(SvmError::DimensionMismatch {
            expected: dims,
            found: f.len(),
        });
    }
    let gamma = params.gamma_for(dims);
    let gram = Gram::new(features, gamma);
    Ok(smo::solve(features, &gram, labels, gamma, &params.smo(params.seed)))
}

/// Per-band `(min, max)` mapping features to `[0, 1]`; constant bands map to 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureScaling {
    pub ranges: Vec<(f64, f64)>,
}

impl FeatureScaling {
    pub fn fit(features: &[Vec<f64>]) -> Self {
        let dims = features[0].len();
        let mut ranges = vec![(f64::INFINITY, f64::NEG_INFINITY); dims];
        for f in features {
            for (r, &v) in ranges.iter_mut().zip(f) {
                r.0 = r.0.min(v);
                r.1 = r.1.max(v);
            }
        }
        Self { ranges }
    }

    pub fn dims(&self) -> usize {
        self.ranges.len()
    }

    #[inline]
    pub fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        for ((o, &v), &(lo, hi)) in out.iter_mut().zip(x).zip(&self.ranges) {
            *o = if hi > lo { (v - lo) / (hi - lo) } else { 0.0 };
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        self.apply_into(x, &mut out);
        out
    }
}

/// One-against-all multiclass model: binary model `c - 1` separates class `c` from the rest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub classes: u8,
    pub gamma: f64,
    #[serde(rename = "C")]
    pub c: f64,
    pub scaling: FeatureScaling,
    pub models: Vec<BinaryModel>,
    /// Whether every binary problem met the KKT tolerance within the pass budget.
    #[serde(default = "default_true")]
    pub converged: bool,
}

fn default_true() -> bool {
    true
}

impl SvmModel {
    pub fn dims(&self) -> usize {
        self.scaling.dims()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut model: SvmModel = serde_json::from_str(text).map_err(|e| SvmError::Model(e.to_string()))?;
        if model.models.len() != model.classes as usize || model.classes < 2 {
            return Err(SvmError::Model(format!(
                "{} binary models for {} classes",
                model.models.len(),
                model.classes
            )));
        }
        let dims = model.dims();
        for m in &mut model.models {
            if m.support_vectors.len() != m.dual_coeffs.len() {
                return Err(SvmError::Model("support vector / coefficient count mismatch".into()));
            }
            if m.support_vectors.iter().any(|sv| sv.len() != dims) {
                return Err(SvmError::Model("support vector dimension mismatch".into()));
            }
            m.gamma = model.gamma;
        }
        Ok(model)
    }

    /// Decision value of every binary model for a raw (unscaled) feature vector.
    pub fn decision_values(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dims(x.len())?;
        let scaled = self.scaling.apply(x);
        Ok(self.models.iter().map(|m| m.decision_unchecked(&scaled)).collect())
    }

    fn check_dims(&self, found: usize) -> Result<()> {
        if found != self.dims() {
            return Err(SvmError::DimensionMismatch {
                expected: self.dims(),
                found,
            });
        }
        Ok(())
    }
}

/// Trains the K one-vs-all problems on min-max scaled features.
pub fn train_one_vs_all(ts: &TrainingSet, params: &SvmParams) -> Result<SvmModel> {
    train_one_vs_all_detailed(ts, params).map(|(m, _)| m)
}

/// As [`train_one_vs_all`], also returning each binary solution with its diagnostics.
pub fn train_one_vs_all_detailed(ts: &TrainingSet, params: &SvmParams) -> Result<(SvmModel, Vec<BinarySolution>)> {
    params.validate()?;
    let k = ts.class_count()?;
    let scaling = FeatureScaling::fit(ts.features());
    let scaled: Vec<Vec<f64>> = ts.features().iter().map(|f| scaling.apply(f)).collect();
    let gamma = params.gamma_for(ts.dims());
    let gram = Gram::new(&scaled, gamma);
    let solutions: Vec<BinarySolution> = (1..=k)
        .into_par_iter()
        .map(|class| {
            let y: Vec<f64> = ts
                .labels()
                .iter()
                .map(|&l| if l == class { 1.0 } else { -1.0 })
                .collect();
            let seed = params.seed.wrapping_add(u64::from(class));
            smo::solve(&scaled, &gram, &y, gamma, &params.smo(seed))
        })
        .collect();
    let model = SvmModel {
        classes: k,
        gamma,
        c: params.c,
        scaling,
        models: solutions.iter().map(|s| s.model.clone()).collect(),
        converged: solutions.iter().all(|s| s.converged),
    };
    Ok((model, solutions))
}

/// Argmax of the decision values; ties go to the smallest class ID.
fn argmax_class(values: &[f64]) -> u8 {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best as u8 + 1
}

pub fn predict(model: &SvmModel, x: &[f64]) -> Result<u8> {
    Ok(argmax_class(&model.decision_values(x)?))
}

/// Evaluates a model with the kernel against each distinct support vector computed once.
pub struct Predictor<'m> {
    model: &'m SvmModel,
    pool: Vec<&'m [f64]>,
    /// Per binary model: `(pool index, coefficient)` in the model's support-vector order.
    terms: Vec<Vec<(usize, f64)>>,
}

impl<'m> Predictor<'m> {
    pub fn new(model: &'m SvmModel) -> Self {
        let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut pool: Vec<&[f64]> = Vec::new();
        let terms = model
            .models
            .iter()
            .map(|m| {
                m.support_vectors
                    .iter()
                    .zip(&m.dual_coeffs)
                    .map(|(sv, &c)| {
                        let key: Vec<u64> = sv.iter().map(|v| v.to_bits()).collect();
                        let id = *index.entry(key).or_insert_with(|| {
                            pool.push(sv);
                            pool.len() - 1
                        });
                        (id, c)
                    })
                    .collect()
            })
            .collect();
        Self { model, pool, terms }
    }

    fn predict_with(&self, x: &[f64], scaled: &mut [f64], kernel: &mut [f64], values: &mut [f64]) -> u8 {
        self.model.scaling.apply_into(x, scaled);
        for (k, sv) in kernel.iter_mut().zip(&self.pool) {
            *k = rbf_kernel_unchecked(sv, scaled, self.model.gamma);
        }
        for ((v, terms), m) in values.iter_mut().zip(&self.terms).zip(&self.model.models) {
            *v = terms.iter().map(|&(i, c)| c * kernel[i]).sum::<f64>() + m.bias;
        }
        argmax_class(values)
    }

    pub fn predict(&self, x: &[f64]) -> Result<u8> {
        self.model.check_dims(x.len())?;
        let mut scaled = vec![0.0; x.len()];
        let mut kernel = vec![0.0; self.pool.len()];
        let mut values = vec![0.0; self.terms.len()];
        Ok(self.predict_with(x, &mut scaled, &mut kernel, &mut values))
    }
}

/// Predicts a class for every pixel of `image`.
pub fn classify_raster(model: &SvmModel, image: &Raster) -> Result<LabelMask> {
    model.check_dims(image.bands())?;
    let predictor = Predictor::new(model);
    let (w, h, bands) = (image.width(), image.height(), image.bands());
    let rows: Vec<Vec<u8>> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut px = vec![0.0; bands];
            let mut scaled = vec![0.0; bands];
            let mut kernel = vec![0.0; predictor.pool.len()];
            let mut values = vec![0.0; predictor.terms.len()];
            (0..w)
                .map(|x| {
                    for (b, p) in px.iter_mut().enumerate() {
                        *p = image.get(b, x, y);
                    }
                    predictor.predict_with(&px, &mut scaled, &mut kernel, &mut values)
                })
                .collect()
        })
        .collect();
    Ok(LabelMask::new(w, h, rows.concat())?)
}
