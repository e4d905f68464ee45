//! Binary soft-margin SVM dual solved by sequential minimal optimization.
//!
//! Pairs of multipliers are optimized analytically (Platt's scheme): the first index comes
//! from a KKT-violation scan, the second maximizes `|E1 - E2|` among unbounded
//! multipliers, with fallback scans over unbounded and then all multipliers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{rbf_kernel_unchecked, BinaryModel};

/// Multipliers at or below this are dropped from the support-vector list.
pub const SUPPORT_THRESHOLD: f64 = 1e-8;
const DENSE_LIMIT: usize = 6000;

/// Kernel values over a training set, materialized when it fits in memory.
pub enum Gram<'a> {
    Dense { n: usize, values: Vec<f64> },
    Lazy { features: &'a [Vec<f64>], gamma: f64 },
}

impl<'a> Gram<'a> {
    pub fn new(features: &'a [Vec<f64>], gamma: f64) -> Self {
        let n = features.len();
        if n > DENSE_LIMIT {
            return Gram::Lazy { features, gamma };
        }
        let mut values = vec![0.0; n * n];
        for i in 0..n {
            values[i * n + i] = 1.0;
            for j in 0..i {
                let k = rbf_kernel_unchecked(&features[i], &features[j], gamma);
                values[i * n + j] = k;
                values[j * n + i] = k;
            }
        }
        Gram::Dense { n, values }
    }

    pub fn len(&self) -> usize {
        match self {
            Gram::Dense { n, .. } => *n,
            Gram::Lazy { features, .. } => features.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        match self {
            Gram::Dense { n, values } => values[i * n + j],
            Gram::Lazy { features, gamma } => rbf_kernel_unchecked(&features[i], &features[j], *gamma),
        }
    }

    fn row_into(&self, i: usize, out: &mut [f64]) {
        match self {
            Gram::Dense { n, values } => out.copy_from_slice(&values[i * n..(i + 1) * n]),
            Gram::Lazy { features, gamma } => {
                for (j, o) in out.iter_mut().enumerate() {
                    *o = rbf_kernel_unchecked(&features[i], &features[j], *gamma);
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoSettings {
    pub c: f64,
    pub tol: f64,
    pub max_passes: usize,
    pub seed: u64,
}

/// Solver output: the model plus the full multiplier vector and diagnostics.
#[derive(Debug, Clone)]
pub struct BinarySolution {
    pub model: BinaryModel,
    /// One multiplier per training point (including zeros).
    pub alphas: Vec<f64>,
    pub converged: bool,
    pub passes: usize,
    /// Largest KKT violation over the training set with the final bias.
    pub kkt_residual: f64,
}

struct Solver<'g, 'a> {
    gram: &'g Gram<'a>,
    y: &'g [f64],
    c: f64,
    tol: f64,
    /// The requested tolerance; `tol` itself may be tightened below it.
    target_tol: f64,
    alpha: Vec<f64>,
    /// `Σ_j α_j y_j K(j, i)`, without the bias.
    grad: Vec<f64>,
    b: f64,
    row1: Vec<f64>,
    row2: Vec<f64>,
    rng: ChaCha8Rng,
}

impl Solver<'_, '_> {
    #[inline]
    fn error(&self, i: usize) -> f64 {
        self.grad[i] + self.b - self.y[i]
    }

    #[inline]
    fn is_free(&self, i: usize) -> bool {
        self.alpha[i] > 0.0 && self.alpha[i] < self.c
    }

    fn take_step(&mut self, i1: usize, i2: usize) -> bool {
        if i1 == i2 {
            return false;
        }
        let (a1, a2) = (self.alpha[i1], self.alpha[i2]);
        let (y1, y2) = (self.y[i1], self.y[i2]);
        let (e1, e2) = (self.error(i1), self.error(i2));
        let s = y1 * y2;
        let c = self.c;
        let (lo, hi) = if y1 != y2 {
            ((a2 - a1).max(0.0), (c + a2 - a1).min(c))
        } else {
            ((a1 + a2 - c).max(0.0), (a1 + a2).min(c))
        };
        if hi - lo <= 0.0 {
            return false;
        }
        let k11 = self.gram.get(i1, i1);
        let k12 = self.gram.get(i1, i2);
        let k22 = self.gram.get(i2, i2);
        let eta = k11 + k22 - 2.0 * k12;
        // Dual objective change along the constraint line, as a function of the new a2.
        let gain = |a: f64| (a - a2) * y2 * (e1 - e2) - 0.5 * eta * (a - a2) * (a - a2);
        let mut a2_new = if eta > 1e-12 {
            (a2 + y2 * (e1 - e2) / eta).clamp(lo, hi)
        } else {
            let (g_lo, g_hi) = (gain(lo), gain(hi));
            if g_lo > g_hi + 1e-12 {
                lo
            } else if g_hi > g_lo + 1e-12 {
                hi
            } else {
                a2
            }
        };
        if a2_new < 1e-12 {
            a2_new = 0.0;
        } else if a2_new > c - 1e-12 * c {
            a2_new = c;
        }
        if (a2_new - a2).abs() < 1e-10 * (a2_new + a2 + 1e-10) {
            return false;
        }
        let mut a1_new = a1 + s * (a2 - a2_new);
        if a1_new < 1e-12 {
            a1_new = 0.0;
        } else if a1_new > c - 1e-12 * c {
            a1_new = c;
        }
        let d1 = y1 * (a1_new - a1);
        let d2 = y2 * (a2_new - a2);
        let b1 = self.b - e1 - d1 * k11 - d2 * k12;
        let b2 = self.b - e2 - d1 * k12 - d2 * k22;
        self.alpha[i1] = a1_new;
        self.alpha[i2] = a2_new;
        self.b = if self.is_free(i1) {
            b1
        } else if self.is_free(i2) {
            b2
        } else {
            0.5 * (b1 + b2)
        };
        let mut row1 = std::mem::take(&mut self.row1);
        let mut row2 = std::mem::take(&mut self.row2);
        self.gram.row_into(i1, &mut row1);
        self.gram.row_into(i2, &mut row2);
        for ((g, k1), k2) in self.grad.iter_mut().zip(&row1).zip(&row2) {
            *g += d1 * k1 + d2 * k2;
        }
        self.row1 = row1;
        self.row2 = row2;
        true
    }

    fn examine(&mut self, i2: usize) -> bool {
        let n = self.alpha.len();
        let e2 = self.error(i2);
        let r2 = e2 * self.y[i2];
        let a2 = self.alpha[i2];
        if !((r2 < -self.tol && a2 < self.c) || (r2 > self.tol && a2 > 0.0)) {
            return false;
        }
        let mut best = None;
        let mut best_gap = -1.0;
        let mut free_count = 0;
        for i in 0..n {
            if self.is_free(i) {
                free_count += 1;
                let gap = (self.error(i) - e2).abs();
                if gap > best_gap {
                    best_gap = gap;
                    best = Some(i);
                }
            }
        }
        if free_count > 1 {
            if let Some(i1) = best {
                if self.take_step(i1, i2) {
                    return true;
                }
            }
        }
        let start = self.rng.gen_range(0..n);
        for off in 0..n {
            let i1 = (start + off) % n;
            if self.is_free(i1) && self.take_step(i1, i2) {
                return true;
            }
        }
        let start = self.rng.gen_range(0..n);
        for off in 0..n {
            let i1 = (start + off) % n;
            if self.take_step(i1, i2) {
                return true;
            }
        }
        false
    }

    /// Runs examine sweeps until a full sweep changes nothing, the KKT conditions hold to
    /// the requested tolerance with the final bias, or the pass budget runs out.
    fn run(&mut self, passes: &mut usize, max_passes: usize) -> bool {
        let n = self.alpha.len();
        let mut examine_all = true;
        loop {
            if *passes >= max_passes {
                return false;
            }
            *passes += 1;
            let mut changed = 0;
            for i in 0..n {
                if (examine_all || self.is_free(i)) && self.examine(i) {
                    changed += 1;
                }
            }
            if changed > 0 && residual_from_cache(self, self.final_bias()) <= self.target_tol {
                return true;
            }
            if examine_all {
                if changed == 0 {
                    return true;
                }
                examine_all = false;
            } else if changed == 0 {
                examine_all = true;
            }
        }
    }

    /// Mean of `y_i - g_i` over unbounded multipliers, or the midpoint of the KKT-feasible
    /// interval when every multiplier sits at a bound.
    fn final_bias(&self) -> f64 {
        let mut sum = 0.0;
        let mut count = 0usize;
        let mut lower = f64::NEG_INFINITY;
        let mut upper = f64::INFINITY;
        for i in 0..self.alpha.len() {
            let v = self.y[i] - self.grad[i];
            if self.is_free(i) {
                sum += v;
                count += 1;
            } else if (self.y[i] > 0.0) == (self.alpha[i] == 0.0) {
                lower = lower.max(v);
            } else {
                upper = upper.min(v);
            }
        }
        if count > 0 {
            sum / count as f64
        } else if lower.is_finite() && upper.is_finite() {
            0.5 * (lower + upper)
        } else if lower.is_finite() {
            lower
        } else if upper.is_finite() {
            upper
        } else {
            0.0
        }
    }
}

/// Largest violation of the KKT conditions `α=0 ⇒ y f ≥ 1`, `α=C ⇒ y f ≤ 1`,
/// `0<α<C ⇒ y f = 1`, where `f_i = Σ_j α_j y_j K(j,i) + b`.
pub fn kkt_residual(gram: &Gram<'_>, y: &[f64], alphas: &[f64], bias: f64, c: f64) -> f64 {
    let n = y.len();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        let f: f64 = (0..n).map(|j| alphas[j] * y[j] * gram.get(j, i)).sum::<f64>() + bias;
        let m = y[i] * f - 1.0;
        let v = if alphas[i] <= 0.0 {
            (-m).max(0.0)
        } else if alphas[i] >= c {
            m.max(0.0)
        } else {
            m.abs()
        };
        worst = worst.max(v);
    }
    worst
}

/// Solves the binary dual for labels `y ∈ {-1, +1}` over the points behind `gram`.
pub fn solve(features: &[Vec<f64>], gram: &Gram<'_>, y: &[f64], gamma: f64, settings: &SmoSettings) -> BinarySolution {
    let n = y.len();
    let mut solver = Solver {
        gram,
        y,
        c: settings.c,
        tol: settings.tol,
        target_tol: settings.tol,
        alpha: vec![0.0; n],
        grad: vec![0.0; n],
        b: 0.0,
        row1: vec![0.0; n],
        row2: vec![0.0; n],
        rng: ChaCha8Rng::seed_from_u64(settings.seed),
    };
    let mut passes = 0;
    let mut converged = false;
    let mut bias;
    let mut residual;
    // Platt's criterion uses the running bias; tighten it until the final bias also
    // satisfies the KKT conditions to `tol`.
    loop {
        let swept_clean = solver.run(&mut passes, settings.max_passes);
        bias = solver.final_bias();
        residual = residual_from_cache(&solver, bias);
        if swept_clean && residual <= settings.tol {
            converged = true;
            break;
        }
        if passes >= settings.max_passes || solver.tol < settings.tol * 1e-3 {
            break;
        }
        solver.b = bias;
        solver.tol *= 0.5;
    }
    let mut support_vectors = Vec::new();
    let mut dual_coeffs = Vec::new();
    for i in 0..n {
        if solver.alpha[i] > SUPPORT_THRESHOLD {
            support_vectors.push(features[i].clone());
            dual_coeffs.push(solver.alpha[i] * y[i]);
        }
    }
    BinarySolution {
        model: BinaryModel {
            support_vectors,
            dual_coeffs,
            bias,
            gamma,
        },
        alphas: solver.alpha,
        converged,
        passes,
        kkt_residual: residual,
    }
}

fn residual_from_cache(s: &Solver<'_, '_>, bias: f64) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..s.alpha.len() {
        let m = s.y[i] * (s.grad[i] + bias) - 1.0;
        let v = if s.alpha[i] <= 0.0 {
            (-m).max(0.0)
        } else if s.alpha[i] >= s.c {
            m.max(0.0)
        } else {
            m.abs()
        };
        worst = worst.max(v);
    }
    worst
}
