//! Spatiotemporal bilateral filter.
//!
//! Every output sample of image `p` at `(m, n)` is a normalized weighted sum over the
//! spatial window and over all dates `k` of the stack:
//!
//! ```text
//! F_b = Σ_window Σ_k ws·wr_b·wt_k·I_k,b(x,y) / Σ_window Σ_k ws·wr_b·wt_k
//! ```
//!
//! * `ws` is a Gaussian of the squared pixel offset (shared across bands and dates),
//! * `wr_b` compares the neighbor to the window center *within date k*, per band, on raw
//!   sample units,
//! * `wt_k = exp(-d / (2 σt²))` where `d` is the RMS band distance between date `p` and
//!   date `k` at the center pixel, measured on intensities min–max normalized per band
//!   over the whole stack. The exponent is linear in `d`.
//!
//! With `σt = 0` only the date being filtered contributes and the filter is the ordinary
//! bilateral filter. Windows are truncated at image borders.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::{Raster, RasterError, RasterStack};

#[derive(Debug, Error)]
pub enum FilterError {
    #[error("invalid filter parameters: {0}")]
    InvalidParams(String),
    #[error("band vectors differ in length ({0} vs {1})")]
    BandMismatch(usize, usize),
    #[error("pixel ({m}, {n}) of image {p} is outside a {width}x{height}x{dates} stack")]
    OutOfRange {
        p: usize,
        m: usize,
        n: usize,
        width: usize,
        height: usize,
        dates: usize,
    },
    #[error(transparent)]
    Raster(#[from] RasterError),
}

/// Window side length and the spatial, range and temporal bandwidths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterParams {
    pub window: usize,
    pub sigma_s: f64,
    pub sigma_r: f64,
    pub sigma_t: f64,
}

impl Default for FilterParams {
    fn default() -> Self {
        Self {
            window: 5,
            sigma_s: 7.0,
            sigma_r: 50.0,
            sigma_t: 0.2,
        }
    }
}

impl FilterParams {
    pub fn new(window: usize, sigma_s: f64, sigma_r: f64, sigma_t: f64) -> Result<Self, FilterError> {
        let p = Self {
            window,
            sigma_s,
            sigma_r,
            sigma_t,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), FilterError> {
        if self.window == 0 || self.window % 2 == 0 {
            return Err(FilterError::InvalidParams(format!(
                "window must be odd and >= 1, got {}",
                self.window
            )));
        }
        if !(self.sigma_s.is_finite() && self.sigma_s > 0.0) {
            return Err(FilterError::InvalidParams(format!("sigma_s must be > 0, got {}", self.sigma_s)));
        }
        if !(self.sigma_r.is_finite() && self.sigma_r > 0.0) {
            return Err(FilterError::InvalidParams(format!("sigma_r must be > 0, got {}", self.sigma_r)));
        }
        if !(self.sigma_t.is_finite() && self.sigma_t >= 0.0) {
            return Err(FilterError::InvalidParams(format!("sigma_t must be >= 0, got {}", self.sigma_t)));
        }
        Ok(())
    }

    pub fn radius(&self) -> usize {
        self.window / 2
    }

    pub fn with_sigma_t(self, sigma_t: f64) -> Self {
        Self { sigma_t, ..self }
    }
}

#[inline]
pub fn spatial_weight(dx: i64, dy: i64, sigma_s: f64) -> f64 {
    let d2 = (dx * dx + dy * dy) as f64;
    (-d2 / (2.0 * sigma_s * sigma_s)).exp()
}

#[inline]
pub fn range_weight(neighbor_value: f64, center_value: f64, sigma_r: f64) -> f64 {
    let d = neighbor_value - center_value;
    (-(d * d) * (1.0 / (2.0 * sigma_r * sigma_r))).exp()
}

/// RMS band distance `sqrt(Σ_b (p_b - k_b)² / B)`.
pub fn temporal_distance(center_p: &[f64], center_k: &[f64]) -> Result<f64, FilterError> {
    if center_p.len() != center_k.len() || center_p.is_empty() {
        return Err(FilterError::BandMismatch(center_p.len(), center_k.len()));
    }
    Ok(rms_distance(center_p, center_k))
}

#[inline]
fn rms_distance(a: &[f64], b: &[f64]) -> f64 {
    let ss: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (ss / a.len() as f64).sqrt()
}

/// `exp(-d / (2 σt²))`, or the self-only indicator when `σt == 0`.
#[inline]
pub fn temporal_weight(d: f64, sigma_t: f64, is_self: bool) -> f64 {
    if sigma_t == 0.0 {
        if is_self {
            1.0
        } else {
            0.0
        }
    } else {
        (-d / (2.0 * sigma_t * sigma_t)).exp()
    }
}

/// The individual weights of one (neighbor, date) contribution.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightComponents {
    pub ws: f64,
    /// One entry per band.
    pub wr: Vec<f64>,
    pub wt: f64,
    /// `ws * wr[b] * wt` per band.
    pub w: Vec<f64>,
}

/// Per-band min/max over every date of a stack, used to map samples to `[0, 1]`
/// for the temporal distance. Constant bands map to 0.
#[derive(Debug, Clone, PartialEq)]
pub struct BandRanges {
    min: Vec<f64>,
    inv_span: Vec<f64>,
}

impl BandRanges {
    pub fn of_stack(stack: &RasterStack) -> Self {
        let bands = stack.bands();
        let mut min = vec![f64::INFINITY; bands];
        let mut max = vec![f64::NEG_INFINITY; bands];
        for r in stack.rasters() {
            for b in 0..bands {
                for &v in r.band(b) {
                    min[b] = min[b].min(v);
                    max[b] = max[b].max(v);
                }
            }
        }
        let inv_span = min
            .iter()
            .zip(&max)
            .map(|(lo, hi)| if hi > lo { 1.0 / (hi - lo) } else { 0.0 })
            .collect();
        Self { min, inv_span }
    }

    #[inline]
    pub fn normalize(&self, band: usize, value: f64) -> f64 {
        (value - self.min[band]) * self.inv_span[band]
    }
}

/// Precomputed state for filtering one stack with fixed parameters.
pub struct SpatiotemporalFilter<'a> {
    stack: &'a RasterStack,
    params: FilterParams,
    ranges: BandRanges,
    spatial: Vec<f64>,
    /// Normalized samples, pixel-interleaved per date: `[date][pixel * bands + band]`.
    normalized: Vec<Vec<f64>>,
}

impl<'a> SpatiotemporalFilter<'a> {
    pub fn new(stack: &'a RasterStack, params: FilterParams) -> Result<Self, FilterError> {
        params.validate()?;
        let ranges = BandRanges::of_stack(stack);
        let r = params.radius() as i64;
        let spatial = (-r..=r)
            .flat_map(|dy| (-r..=r).map(move |dx| spatial_weight(dx, dy, params.sigma_s)))
            .collect();
        let bands = stack.bands();
        let npix = stack.width() * stack.height();
        let normalized = stack
            .rasters()
            .iter()
            .map(|img| {
                let mut out = vec![0.0; npix * bands];
                for b in 0..bands {
                    for (i, &v) in img.band(b).iter().enumerate() {
                        out[i * bands + b] = ranges.normalize(b, v);
                    }
                }
                out
            })
            .collect();
        Ok(Self {
            stack,
            params,
            ranges,
            spatial,
            normalized,
        })
    }

    pub fn params(&self) -> &FilterParams {
        &self.params
    }

    pub fn ranges(&self) -> &BandRanges {
        &self.ranges
    }

    fn normalized_pixel(&self, k: usize, idx: usize) -> &[f64] {
        let b = self.stack.bands();
        &self.normalized[k][idx * b..(idx + 1) * b]
    }

    /// Temporal weight of every date relative to image `p` at pixel index `idx`.
    fn temporal_weights_into(&self, p: usize, idx: usize, out: &mut [f64]) {
        let center = self.normalized_pixel(p, idx);
        for (k, w) in out.iter_mut().enumerate() {
            *w = if k == p {
                temporal_weight(0.0, self.params.sigma_t, true)
            } else if self.params.sigma_t == 0.0 {
                0.0
            } else {
                let d = rms_distance(center, self.normalized_pixel(k, idx));
                temporal_weight(d, self.params.sigma_t, false)
            };
        }
    }

    pub fn temporal_weights(&self, p: usize, m: usize, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.stack.len()];
        self.temporal_weights_into(p, n * self.stack.width() + m, &mut out);
        out
    }

    /// Weight components of neighbor `(x, y)` in date `k` for the output pixel `(p, m, n)`.
    pub fn weight_components(&self, p: usize, m: usize, n: usize, x: usize, y: usize, k: usize) -> WeightComponents {
        let ws = spatial_weight(x as i64 - m as i64, y as i64 - n as i64, self.params.sigma_s);
        let wt = self.temporal_weights(p, m, n)[k];
        let img = &self.stack[k];
        let wr: Vec<f64> = (0..img.bands())
            .map(|b| range_weight(img.get(b, x, y), img.get(b, m, n), self.params.sigma_r))
            .collect();
        let w = wr.iter().map(|r| ws * r * wt).collect();
        WeightComponents { ws, wr, wt, w }
    }

    fn check(&self, p: usize, m: usize, n: usize) -> Result<(), FilterError> {
        let s = self.stack;
        if p >= s.len() || m >= s.width() || n >= s.height() {
            return Err(FilterError::OutOfRange {
                p,
                m,
                n,
                width: s.width(),
                height: s.height(),
                dates: s.len(),
            });
        }
        Ok(())
    }

    pub fn filter_pixel(&self, p: usize, m: usize, n: usize) -> Result<Vec<f64>, FilterError> {
        self.check(p, m, n)?;
        let mut wt = vec![0.0; self.stack.len()];
        self.temporal_weights_into(p, n * self.stack.width() + m, &mut wt);
        let mut out = vec![0.0; self.stack.bands()];
        self.pixel_into(p, m, n, &wt, &mut out);
        Ok(out)
    }

    /// Accumulates window-then-date for each band. Dates with zero temporal weight are skipped.
    #[inline]
    fn pixel_into(&self, p: usize, m: usize, n: usize, wt: &[f64], out: &mut [f64]) {
        let stack = self.stack;
        let (w, h) = (stack.width(), stack.height());
        let r = self.params.radius();
        let side = self.params.window;
        let x0 = m.saturating_sub(r);
        let x1 = (m + r).min(w - 1);
        let y0 = n.saturating_sub(r);
        let y1 = (n + r).min(h - 1);
        let inv_2sr2 = 1.0 / (2.0 * self.params.sigma_r * self.params.sigma_r);
        let npix = w * h;
        let own = stack[p].samples();
        for (b, o) in out.iter_mut().enumerate() {
            // Accumulated relative to the filtered image's own center sample so that a
            // constant neighbourhood reproduces that sample exactly.
            let base = own[b * npix + n * w + m];
            let mut num = 0.0;
            let mut den = 0.0;
            for y in y0..=y1 {
                let srow = (y + r - n) * side;
                for x in x0..=x1 {
                    let ws = self.spatial[srow + x + r - m];
                    for (k, &wtk) in wt.iter().enumerate() {
                        if wtk == 0.0 {
                            continue;
                        }
                        let band = &stack[k].samples()[b * npix..(b + 1) * npix];
                        let c = band[n * w + m];
                        let v = band[y * w + x];
                        let d = v - c;
                        let wr = (-(d * d) * inv_2sr2).exp();
                        let wgt = ws * wr * wtk;
                        num += wgt * (v - base);
                        den += wgt;
                    }
                }
            }
            *o = base + num / den;
        }
    }

    /// Filters image `p` into a new raster.
    pub fn filter_image(&self, p: usize) -> Result<Raster, FilterError> {
        self.check(p, 0, 0)?;
        let stack = self.stack;
        let (w, h, bands, dates) = (stack.width(), stack.height(), stack.bands(), stack.len());
        let rows: Vec<Vec<f64>> = (0..h)
            .into_par_iter()
            .map(|n| {
                let mut wt = vec![0.0; dates];
                let mut px = vec![0.0; bands];
                let mut row = vec![0.0; w * bands];
                for m in 0..w {
                    self.temporal_weights_into(p, n * w + m, &mut wt);
                    self.pixel_into(p, m, n, &wt, &mut px);
                    for (b, v) in px.iter().enumerate() {
                        row[b * w + m] = *v;
                    }
                }
                row
            })
            .collect();
        let mut samples = vec![0.0; w * h * bands];
        for (n, row) in rows.iter().enumerate() {
            for b in 0..bands {
                let dst = (b * h + n) * w;
                samples[dst..dst + w].copy_from_slice(&row[b * w..(b + 1) * w]);
            }
        }
        Ok(Raster::new(w, h, bands, samples, stack[p].date_tag())?)
    }

    pub fn filter_all(&self) -> Result<RasterStack, FilterError> {
        let out = (0..self.stack.len())
            .map(|p| self.filter_image(p))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(RasterStack::new(out)?)
    }
}

/// Filters pixel `(m, n)` of image `p`, returning its band vector.
pub fn filter_pixel(
    stack: &RasterStack,
    p: usize,
    m: usize,
    n: usize,
    params: &FilterParams,
) -> Result<Vec<f64>, FilterError> {
    SpatiotemporalFilter::new(stack, *params)?.filter_pixel(p, m, n)
}

/// Filters every image of the stack from the unmodified input.
pub fn filter_stack(stack: &RasterStack, params: &FilterParams) -> Result<RasterStack, FilterError> {
    SpatiotemporalFilter::new(stack, *params)?.filter_all()
}

/// Conventional single-image bilateral filter with a truncated square window.
///
/// The weighted mean is taken of offsets from the center sample, which is algebraically
/// the usual `Σ w v / Σ w` but reproduces flat regions exactly.
pub fn bilateral_filter(
    image: &Raster,
    window: usize,
    sigma_s: f64,
    sigma_r: f64,
) -> Result<Raster, FilterError> {
    FilterParams::new(window, sigma_s, sigma_r, 0.0)?;
    let (w, h) = (image.width() as i64, image.height() as i64);
    let r = (window / 2) as i64;
    let mut samples = Vec::with_capacity(image.samples().len());
    for b in 0..image.bands() {
        for y in 0..h {
            for x in 0..w {
                let center = image.get(b, x as usize, y as usize);
                let mut num = 0.0;
                let mut den = 0.0;
                for j in (y - r).max(0)..=(y + r).min(h - 1) {
                    for i in (x - r).max(0)..=(x + r).min(w - 1) {
                        let v = image.get(b, i as usize, j as usize);
                        let wgt = spatial_weight(i - x, j - y, sigma_s) * range_weight(v, center, sigma_r);
                        num += wgt * (v - center);
                        den += wgt;
                    }
                }
                samples.push(center + num / den);
            }
        }
    }
    Ok(Raster::new(image.width(), image.height(), image.bands(), samples, image.date_tag())?)
}

/// Mean over date pairs of the RMS sample difference (raw units, all bands and pixels).
pub fn mean_pairwise_rms_distance(stack: &RasterStack) -> f64 {
    let t = stack.len();
    if t < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..t {
        for j in i + 1..t {
            let a = stack[i].samples();
            let b = stack[j].samples();
            let ss: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
            total += (ss / a.len() as f64).sqrt();
            pairs += 1;
        }
    }
    total / pairs as f64
}
