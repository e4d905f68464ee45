//! Affine alignment of a target raster to a reference raster.
//!
//! Transforms map output (reference) pixel coordinates to source (target) coordinates, so
//! `warp(target, t)` resamples the target onto the reference grid.

use nalgebra::{Matrix3, Matrix6, SVD, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::{Raster, RasterError};

#[derive(Debug, Error)]
pub enum RegistrationError {
    #[error("degenerate transform: {0}")]
    Degenerate(String),
    #[error("degenerate point set: {0}")]
    DegeneratePoints(String),
    #[error("registration diverged at pyramid level {level}: {reason}")]
    Diverged { level: usize, reason: String },
    #[error("reference is {reference}, target is {target}")]
    ShapeMismatch { reference: String, target: String },
    #[error("invalid options: {0}")]
    InvalidOptions(String),
    #[error(transparent)]
    Raster(#[from] RasterError),
}

pub type Result<T> = std::result::Result<T, RegistrationError>;

/// `[[a, b, tx], [c, d, ty]]`: `(x, y) -> (a x + b y + tx, c x + d y + ty)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineTransform {
    matrix: [[f64; 3]; 2],
}

impl AffineTransform {
    pub const IDENTITY: AffineTransform = AffineTransform {
        matrix: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
    };

    pub fn new(matrix: [[f64; 3]; 2]) -> Result<Self> {
        let t = Self { matrix };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.matrix.iter().flatten().any(|v| !v.is_finite()) {
            return Err(RegistrationError::Degenerate("non-finite parameter".into()));
        }
        let det = self.determinant().abs();
        if !(1e-6..=1e6).contains(&det) {
            return Err(RegistrationError::Degenerate(format!("|det| = {det:e}")));
        }
        Ok(())
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Self {
            matrix: [[1.0, 0.0, tx], [0.0, 1.0, ty]],
        }
    }

    /// Rotation by `degrees` and isotropic `scale` about `(cx, cy)`, followed by a shift.
    pub fn similarity_about(cx: f64, cy: f64, degrees: f64, scale: f64, tx: f64, ty: f64) -> Self {
        let (s, c) = degrees.to_radians().sin_cos();
        let (a, b) = (scale * c, -scale * s);
        let (cc, d) = (scale * s, scale * c);
        Self {
            matrix: [
                [a, b, cx - a * cx - b * cy + tx],
                [cc, d, cy - cc * cx - d * cy + ty],
            ],
        }
    }

    pub fn matrix(&self) -> [[f64; 3]; 2] {
        self.matrix
    }

    pub fn determinant(&self) -> f64 {
        let m = &self.matrix;
        m[0][0] * m[1][1] - m[0][1] * m[1][0]
    }

    #[inline]
    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let m = &self.matrix;
        (
            m[0][0] * x + m[0][1] * y + m[0][2],
            m[1][0] * x + m[1][1] * y + m[1][2],
        )
    }

    pub fn inverse(&self) -> Result<Self> {
        self.validate()?;
        let m = &self.matrix;
        let det = self.determinant();
        let (a, b, c, d) = (m[1][1] / det, -m[0][1] / det, -m[1][0] / det, m[0][0] / det);
        let tx = -(a * m[0][2] + b * m[1][2]);
        let ty = -(c * m[0][2] + d * m[1][2]);
        Self::new([[a, b, tx], [c, d, ty]])
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &AffineTransform) -> AffineTransform {
        let a = &self.matrix;
        let b = &other.matrix;
        let mut out = [[0.0; 3]; 2];
        for r in 0..2 {
            for c in 0..3 {
                out[r][c] = a[r][0] * b[0][c] + a[r][1] * b[1][c];
            }
            out[r][2] += a[r][2];
        }
        AffineTransform { matrix: out }
    }

    /// Rotation angle of the linear part in degrees.
    pub fn rotation_degrees(&self) -> f64 {
        let m = &self.matrix;
        (m[1][0] - m[0][1]).atan2(m[0][0] + m[1][1]).to_degrees()
    }

    /// RMS displacement between two transforms over the four corners of a `w x h` image.
    pub fn corner_rmse(&self, other: &AffineTransform, width: usize, height: usize) -> f64 {
        let (xm, ym) = ((width - 1) as f64, (height - 1) as f64);
        let corners = [(0.0, 0.0), (xm, 0.0), (0.0, ym), (xm, ym)];
        let ss: f64 = corners
            .iter()
            .map(|&(x, y)| {
                let (ax, ay) = self.apply(x, y);
                let (bx, by) = other.apply(x, y);
                (ax - bx).powi(2) + (ay - by).powi(2)
            })
            .sum();
        (ss / 4.0).sqrt()
    }

    fn params(&self) -> Vector6<f64> {
        let m = &self.matrix;
        Vector6::new(m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2])
    }

    fn from_params(p: &Vector6<f64>) -> Self {
        Self {
            matrix: [[p[0], p[1], p[2]], [p[3], p[4], p[5]]],
        }
    }

    /// Re-expresses the transform for coordinates scaled by `factor`.
    fn rescaled(&self, factor: f64) -> Self {
        let mut m = self.matrix;
        m[0][2] *= factor;
        m[1][2] *= factor;
        Self { matrix: m }
    }
}

/// Least-squares affine with `t.apply(reference_i) ≈ target_i`.
pub fn estimate_affine_points(pairs: &[([f64; 2], [f64; 2])]) -> Result<AffineTransform> {
    if pairs.len() < 3 {
        return Err(RegistrationError::DegeneratePoints(format!(
            "need at least 3 pairs, got {}",
            pairs.len()
        )));
    }
    if pairs.iter().flat_map(|(r, t)| r.iter().chain(t)).any(|v| !v.is_finite()) {
        return Err(RegistrationError::DegeneratePoints("non-finite coordinate".into()));
    }
    // Canonical order makes the floating-point sums independent of pair order.
    let mut pairs = pairs.to_vec();
    pairs.sort_by(|a, b| {
        a.0[0]
            .total_cmp(&b.0[0])
            .then(a.0[1].total_cmp(&b.0[1]))
            .then(a.1[0].total_cmp(&b.1[0]))
            .then(a.1[1].total_cmp(&b.1[1]))
    });
    let n = pairs.len() as f64;
    let (mut cx, mut cy) = (0.0, 0.0);
    for (r, _) in &pairs {
        cx += r[0];
        cy += r[1];
    }
    cx /= n;
    cy /= n;
    let spread = (pairs
        .iter()
        .map(|(r, _)| (r[0] - cx).powi(2) + (r[1] - cy).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    if spread == 0.0 {
        return Err(RegistrationError::DegeneratePoints("all reference points coincide".into()));
    }
    let s = 1.0 / spread;
    let mut normal = Matrix3::<f64>::zeros();
    let mut rhs_x = Vector3::<f64>::zeros();
    let mut rhs_y = Vector3::<f64>::zeros();
    for (r, t) in &pairs {
        let row = Vector3::new((r[0] - cx) * s, (r[1] - cy) * s, 1.0);
        normal += row * row.transpose();
        rhs_x += row * t[0];
        rhs_y += row * t[1];
    }
    let sv = SVD::new(normal, false, false).singular_values;
    let (max, min) = (sv.max(), sv.min());
    if min <= 0.0 || max / min > 1e12 {
        return Err(RegistrationError::DegeneratePoints(format!(
            "normal matrix condition number {:e}",
            if min > 0.0 { max / min } else { f64::INFINITY }
        )));
    }
    let chol = normal
        .cholesky()
        .ok_or_else(|| RegistrationError::DegeneratePoints("normal matrix not positive definite".into()))?;
    let px = chol.solve(&rhs_x);
    let py = chol.solve(&rhs_y);
    // Undo the normalization x' = s (x - c).
    let row = |p: &Vector3<f64>| [p[0] * s, p[1] * s, p[2] - p[0] * s * cx - p[1] * s * cy];
    AffineTransform::new([row(&px), row(&py)])
}

/// Bilinear sample; positions outside `[0, w-1] x [0, h-1]` return `None`.
#[inline]
fn sample_bilinear(data: &[f64], w: usize, h: usize, x: f64, y: f64) -> Option<f64> {
    if !(x >= 0.0 && y >= 0.0 && x <= (w - 1) as f64 && y <= (h - 1) as f64) {
        return None;
    }
    let (x0, fx) = split_coord(x, w);
    let (y0, fy) = split_coord(y, h);
    let i = y0 * w + x0;
    let v00 = data[i];
    let (v10, v01, v11) = match (fx > 0.0, fy > 0.0) {
        (false, false) => return Some(v00),
        (true, false) => (data[i + 1], 0.0, 0.0),
        (false, true) => (0.0, data[i + w], 0.0),
        (true, true) => (data[i + 1], data[i + w], data[i + w + 1]),
    };
    Some(v00 * (1.0 - fx) * (1.0 - fy) + v10 * fx * (1.0 - fy) + v01 * (1.0 - fx) * fy + v11 * fx * fy)
}

#[inline]
fn split_coord(v: f64, len: usize) -> (usize, f64) {
    let mut i = v.floor() as usize;
    if i + 1 >= len && len > 1 {
        i = len - 2;
    }
    if len == 1 {
        return (0, 0.0);
    }
    (i, v - i as f64)
}

/// Resamples `raster` at `t(x, y)` for every output pixel. Out-of-bounds samples are 0.
pub fn warp(raster: &Raster, t: &AffineTransform) -> Result<Raster> {
    t.validate()?;
    let (w, h) = (raster.width(), raster.height());
    let mut samples = Vec::with_capacity(raster.samples().len());
    for b in 0..raster.bands() {
        let band = raster.band(b);
        for y in 0..h {
            for x in 0..w {
                let (sx, sy) = t.apply(x as f64, y as f64);
                samples.push(sample_bilinear(band, w, h, sx, sy).unwrap_or(0.0));
            }
        }
    }
    Ok(Raster::new(w, h, raster.bands(), samples, raster.date_tag())?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegistrationOptions {
    pub pyramid_levels: usize,
    pub max_iters: usize,
    /// Convergence threshold on the update, as max corner displacement in pixels.
    pub tol: f64,
}

impl Default for RegistrationOptions {
    fn default() -> Self {
        Self {
            pyramid_levels: 4,
            max_iters: 50,
            tol: 1e-4,
        }
    }
}

const MAX_HALVINGS: usize = 5;
/// Pixels excluded from the objective along each reference edge.
const BORDER: usize = 2;
const MIN_LEVEL_SIDE: usize = 16;

#[derive(Debug, Clone)]
struct Level {
    w: usize,
    h: usize,
    data: Vec<f64>,
}

impl Level {
    /// 5-tap binomial blur (edge-replicated), then keep every second pixel.
    fn downsample(&self) -> Level {
        const K: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];
        let (w, h) = (self.w, self.h);
        let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
        let mut tmp = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                tmp[y * w + x] = (0..5)
                    .map(|i| K[i] * self.data[y * w + clamp(x as isize + i as isize - 2, w)])
                    .sum();
            }
        }
        let (nw, nh) = (w.div_ceil(2), h.div_ceil(2));
        let mut data = Vec::with_capacity(nw * nh);
        for y in 0..nh {
            for x in 0..nw {
                let (sx, sy) = (2 * x, 2 * y);
                data.push(
                    (0..5)
                        .map(|i| K[i] * tmp[clamp(sy as isize + i as isize - 2, h) * w + sx])
                        .sum(),
                );
            }
        }
        Level { w: nw, h: nh, data }
    }

    /// Central-difference gradients, one-sided at the edges.
    fn gradients(&self) -> (Vec<f64>, Vec<f64>) {
        let (w, h) = (self.w, self.h);
        let mut gx = vec![0.0; w * h];
        let mut gy = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                gx[i] = if w == 1 {
                    0.0
                } else if x == 0 {
                    self.data[i + 1] - self.data[i]
                } else if x == w - 1 {
                    self.data[i] - self.data[i - 1]
                } else {
                    0.5 * (self.data[i + 1] - self.data[i - 1])
                };
                gy[i] = if h == 1 {
                    0.0
                } else if y == 0 {
                    self.data[i + w] - self.data[i]
                } else if y == h - 1 {
                    self.data[i] - self.data[i - w]
                } else {
                    0.5 * (self.data[i + w] - self.data[i - w])
                };
            }
        }
        (gx, gy)
    }
}

fn pyramid(gray: &Raster, levels: usize) -> Vec<Level> {
    let mut out = vec![Level {
        w: gray.width(),
        h: gray.height(),
        data: gray.samples().to_vec(),
    }];
    while out.len() < levels {
        let last = out.last().unwrap();
        if last.w.min(last.h) / 2 < MIN_LEVEL_SIDE {
            break;
        }
        out.push(last.downsample());
    }
    out
}

/// Mean squared difference over reference pixels whose image under `t` lands in the target.
fn mean_sq_error(reference: &Level, target: &Level, t: &AffineTransform) -> Option<f64> {
    let mut ss = 0.0;
    let mut count = 0usize;
    for y in BORDER..reference.h.saturating_sub(BORDER) {
        for x in BORDER..reference.w.saturating_sub(BORDER) {
            let (sx, sy) = t.apply(x as f64, y as f64);
            if let Some(v) = sample_bilinear(&target.data, target.w, target.h, sx, sy) {
                let r = v - reference.data[y * reference.w + x];
                ss += r * r;
                count += 1;
            }
        }
    }
    (count > 0).then(|| ss / count as f64)
}

fn max_corner_shift(delta: &Vector6<f64>, w: usize, h: usize) -> f64 {
    let (xm, ym) = ((w - 1) as f64, (h - 1) as f64);
    [(0.0, 0.0), (xm, 0.0), (0.0, ym), (xm, ym)]
        .iter()
        .map(|&(x, y)| {
            let dx = delta[0] * x + delta[1] * y + delta[2];
            let dy = delta[3] * x + delta[4] * y + delta[5];
            (dx * dx + dy * dy).sqrt()
        })
        .fold(0.0, f64::max)
}

fn refine_level(
    reference: &Level,
    target: &Level,
    start: AffineTransform,
    opts: &RegistrationOptions,
    level: usize,
) -> Result<AffineTransform> {
    let (gx, gy) = target.gradients();
    let mut current = start;
    let mut err = mean_sq_error(reference, target, &current).ok_or_else(|| RegistrationError::Diverged {
        level,
        reason: "no overlap between reference and warped target".into(),
    })?;
    for _ in 0..opts.max_iters {
        let mut hess = Matrix6::<f64>::zeros();
        let mut grad = Vector6::<f64>::zeros();
        for y in BORDER..reference.h.saturating_sub(BORDER) {
            for x in BORDER..reference.w.saturating_sub(BORDER) {
                let (xf, yf) = (x as f64, y as f64);
                let (sx, sy) = current.apply(xf, yf);
                let Some(v) = sample_bilinear(&target.data, target.w, target.h, sx, sy) else {
                    continue;
                };
                let ix = sample_bilinear(&gx, target.w, target.h, sx, sy).unwrap_or(0.0);
                let iy = sample_bilinear(&gy, target.w, target.h, sx, sy).unwrap_or(0.0);
                let r = v - reference.data[y * reference.w + x];
                let j = Vector6::new(ix * xf, ix * yf, ix, iy * xf, iy * yf, iy);
                hess.syger(1.0, &j, &j, 1.0);
                grad.axpy(r, &j, 1.0);
            }
        }
        let Some(delta) = hess.cholesky().map(|c| -c.solve(&grad)) else {
            // Flat image: no gradient information at this level.
            return Ok(current);
        };
        if !delta.iter().all(|v| v.is_finite()) {
            return Err(RegistrationError::Diverged {
                level,
                reason: "non-finite update".into(),
            });
        }
        if max_corner_shift(&delta, reference.w, reference.h) < opts.tol {
            return Ok(current);
        }
        let mut step = delta;
        let mut accepted = false;
        for _ in 0..=MAX_HALVINGS {
            let candidate = AffineTransform::from_params(&(current.params() + step));
            if candidate.validate().is_ok() {
                if let Some(e) = mean_sq_error(reference, target, &candidate) {
                    if e <= err {
                        current = candidate;
                        err = e;
                        accepted = true;
                        break;
                    }
                }
            }
            step *= 0.5;
        }
        if !accepted {
            // No damped step lowers the objective: `current` is a local minimum along the
            // Gauss-Newton direction.
            return Ok(current);
        }
        if max_corner_shift(&step, reference.w, reference.h) < opts.tol {
            return Ok(current);
        }
    }
    Ok(current)
}

/// Coarse-to-fine Gauss–Newton minimization of the squared grayscale difference between
/// `reference` and `target` warped by the returned transform, starting from identity.
pub fn estimate_affine_intensity(
    reference: &Raster,
    target: &Raster,
    opts: &RegistrationOptions,
) -> Result<AffineTransform> {
    if !reference.same_shape(target) {
        let shape = |r: &Raster| format!("{}x{}x{}", r.width(), r.height(), r.bands());
        return Err(RegistrationError::ShapeMismatch {
            reference: shape(reference),
            target: shape(target),
        });
    }
    if opts.pyramid_levels == 0 || opts.max_iters == 0 || !(opts.tol > 0.0) {
        return Err(RegistrationError::InvalidOptions(format!("{opts:?}")));
    }
    let ref_pyr = pyramid(&reference.grayscale(), opts.pyramid_levels);
    let tgt_pyr = pyramid(&target.grayscale(), opts.pyramid_levels);
    let coarsest = ref_pyr.len() - 1;
    let mut t = AffineTransform::IDENTITY;
    for level in (0..=coarsest).rev() {
        t = refine_level(&ref_pyr[level], &tgt_pyr[level], t, opts, level)?;
        if level > 0 {
            t = t.rescaled(2.0);
        }
    }
    t.validate()?;
    Ok(t)
}
