//! Synthetic multi-date scenes: class blobs with per-date radiometric perturbations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::raster::{LabelMask, Raster, RasterStack};

/// A radiometric change applied to one date, in the order listed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Perturbation {
    /// Global gamma curve `255 (v / 255)^gamma` (haze / illumination).
    Haze { date: usize, gamma: f64 },
    /// Additive bright rectangle (cloud).
    Cloud {
        date: usize,
        x: usize,
        y: usize,
        width: usize,
        height: usize,
        amplitude: f64,
    },
    /// Per-band additive shift on every pixel of one class (seasonal change).
    Drift { date: usize, class: u8, shift: Vec<f64> },
    /// Independent Gaussian noise (sensor noise).
    Noise { date: usize, sigma: f64 },
}

impl Perturbation {
    pub fn date(&self) -> usize {
        match self {
            Perturbation::Haze { date, .. }
            | Perturbation::Cloud { date, .. }
            | Perturbation::Drift { date, .. }
            | Perturbation::Noise { date, .. } => *date,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub size: usize,
    pub dates: usize,
    pub classes: u8,
    pub bands: usize,
    /// Standard deviation of the per-pixel texture shared by all dates (DN).
    pub texture: f64,
    pub perturbations: Vec<Perturbation>,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            size: 64,
            dates: 3,
            classes: 4,
            bands: 4,
            texture: 12.0,
            perturbations: Vec::new(),
            seed: 0,
        }
    }
}

impl SynthSpec {
    /// Three dates; date 1 is hazed (gamma 0.6) and carries a cloud patch, date 2 has
    /// light sensor noise. Date 0 is the clean reference.
    pub fn distorted_scenario(size: usize, seed: u64) -> Self {
        let patch = size / 4;
        Self {
            size,
            dates: 3,
            classes: 4,
            bands: 4,
            texture: 12.0,
            perturbations: vec![
                Perturbation::Haze { date: 1, gamma: 0.6 },
                Perturbation::Cloud {
                    date: 1,
                    x: size / 8,
                    y: size / 2,
                    width: patch,
                    height: patch,
                    amplitude: 60.0,
                },
                Perturbation::Noise { date: 2, sigma: 4.0 },
            ],
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.size < 32 {
            return bad(format!("size must be >= 32, got {}", self.size));
        }
        if self.dates < 2 {
            return bad(format!("dates must be >= 2, got {}", self.dates));
        }
        if !(2..=6).contains(&self.classes) {
            return bad(format!("classes must be in 2..=6, got {}", self.classes));
        }
        if self.bands == 0 {
            return bad("bands must be positive".into());
        }
        for p in &self.perturbations {
            if p.date() >= self.dates {
                return bad(format!("perturbation on date {} of {}", p.date(), self.dates));
            }
            match p {
                Perturbation::Haze { gamma, .. } if !(*gamma > 0.0 && gamma.is_finite()) => {
                    return bad(format!("haze gamma must be positive, got {gamma}"))
                }
                Perturbation::Drift { class, shift, .. } => {
                    if *class == 0 || *class > self.classes {
                        return bad(format!("drift class {class} out of range"));
                    }
                    if shift.len() != 1 && shift.len() != self.bands {
                        return bad(format!("drift shift needs 1 or {} entries", self.bands));
                    }
                }
                Perturbation::Noise { sigma, .. } if !(*sigma >= 0.0) => {
                    return bad(format!("noise sigma must be >= 0, got {sigma}"))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Synthetic stack plus its ground truth (one mask per date; all dates share the layout).
#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub stack: RasterStack,
    pub masks: Vec<LabelMask>,
    /// Class of every pixel, without the unlabeled boundary.
    pub classes: Vec<u8>,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Per-class mean band vectors with a minimum RMS separation.
fn signatures(rng: &mut ChaCha8Rng, classes: usize, bands: usize) -> Vec<Vec<f64>> {
    let min_rms = 28.0;
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(classes);
    let mut attempts = 0;
    while out.len() < classes {
        let cand: Vec<f64> = (0..bands).map(|_| rng.gen_range(45.0..190.0f64).round()).collect();
        attempts += 1;
        let far = out.iter().all(|o| {
            let ss: f64 = o.iter().zip(&cand).map(|(a, b)| (a - b) * (a - b)).sum();
            (ss / bands as f64).sqrt() >= min_rms
        });
        if far || attempts > 10_000 {
            out.push(cand);
        }
    }
    out
}

/// Builds the scene. Base samples are integral DNs so additive perturbations are exact.
pub fn generate_synthetic_stack(spec: &SynthSpec) -> Result<SyntheticScene, PipelineError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (n, k, bands) = (spec.size, spec.classes as usize, spec.bands);
    let sig = signatures(&mut rng, k, bands);

    // Voronoi blobs, at least one cell per class.
    let cells = 3 * k;
    let seeds: Vec<(f64, f64, u8)> = (0..cells)
        .map(|i| {
            (
                rng.gen_range(0.0..n as f64),
                rng.gen_range(0.0..n as f64),
                (i % k) as u8 + 1,
            )
        })
        .collect();
    let mut classes = vec![0u8; n * n];
    for y in 0..n {
        for x in 0..n {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let nearest = seeds
                .iter()
                .min_by(|a, b| {
                    let da = (a.0 - px).powi(2) + (a.1 - py).powi(2);
                    let db = (b.0 - px).powi(2) + (b.1 - py).powi(2);
                    da.total_cmp(&db)
                })
                .unwrap();
            classes[y * n + x] = nearest.2;
        }
    }
    let labels: Vec<u8> = (0..n * n)
        .map(|i| {
            let (x, y) = (i % n, i / n);
            let c = classes[i];
            let edge = (x > 0 && classes[i - 1] != c)
                || (x + 1 < n && classes[i + 1] != c)
                || (y > 0 && classes[i - n] != c)
                || (y + 1 < n && classes[i + n] != c);
            if edge {
                0
            } else {
                c
            }
        })
        .collect();

    let mut base = vec![0.0; n * n * bands];
    for b in 0..bands {
        for i in 0..n * n {
            let c = classes[i] as usize - 1;
            base[b * n * n + i] = (sig[c][b] + spec.texture * normal(&mut rng)).round().clamp(0.0, 255.0);
        }
    }

    let mut rasters = Vec::with_capacity(spec.dates);
    for date in 0..spec.dates {
        let mut s = base.clone();
        for p in spec.perturbations.iter().filter(|p| p.date() == date) {
            match p {
                Perturbation::Haze { gamma, .. } => {
                    for v in s.iter_mut() {
                        *v = 255.0 * (v.max(0.0) / 255.0).powf(*gamma);
                    }
                }
                Perturbation::Cloud {
                    x,
                    y,
                    width,
                    height,
                    amplitude,
                    ..
                } => {
                    for b in 0..bands {
                        for yy in *y..(*y + *height).min(n) {
                            for xx in *x..(*x + *width).min(n) {
                                s[b * n * n + yy * n + xx] += amplitude;
                            }
                        }
                    }
                }
                Perturbation::Drift { class, shift, .. } => {
                    for b in 0..bands {
                        let d = if shift.len() == 1 { shift[0] } else { shift[b] };
                        for i in 0..n * n {
                            if classes[i] == *class {
                                s[b * n * n + i] += d;
                            }
                        }
                    }
                }
                Perturbation::Noise { sigma, .. } => {
                    let mut noise_rng = ChaCha8Rng::seed_from_u64(spec.seed ^ (0x9e37_79b9 + date as u64));
                    for v in s.iter_mut() {
                        *v += sigma * normal(&mut noise_rng);
                    }
                }
            }
        }
        rasters.push(Raster::new(n, n, bands, s, format!("date-{date}"))?);
    }
    let mask = LabelMask::new(n, n, labels)?;
    Ok(SyntheticScene {
        stack: RasterStack::new(rasters)?,
        masks: vec![mask; spec.dates],
        classes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_perturbations_means_identical_dates() {
        let scene = generate_synthetic_stack(&SynthSpec::default()).unwrap();
        let s = &scene.stack;
        assert_eq!(s.len(), 3);
        for r in &s.rasters()[1..] {
            assert_eq!(r.samples(), s[0].samples());
        }
        assert_eq!(scene.masks[0].class_count().unwrap(), 4);
        assert!(scene.masks[0].labeled_count() < 64 * 64);
    }

    #[test]
    fn cloud_adds_exact_amplitude_inside_patch() {
        let spec = SynthSpec {
            dates: 3,
            perturbations: vec![Perturbation::Cloud {
                date: 2,
                x: 10,
                y: 5,
                width: 8,
                height: 6,
                amplitude: 37.5,
            }],
            seed: 4,
            ..SynthSpec::default()
        };
        let scene = generate_synthetic_stack(&spec).unwrap();
        let (d1, d2) = (&scene.stack[1], &scene.stack[2]);
        for b in 0..d1.bands() {
            for y in 0..64 {
                for x in 0..64 {
                    let inside = (10..18).contains(&x) && (5..11).contains(&y);
                    let diff = d2.get(b, x, y) - d1.get(b, x, y);
                    assert_eq!(diff, if inside { 37.5 } else { 0.0 });
                }
            }
        }
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let spec = SynthSpec::distorted_scenario(48, 7);
        let a = generate_synthetic_stack(&spec).unwrap();
        let b = generate_synthetic_stack(&spec).unwrap();
        assert_eq!(a.stack, b.stack);
        assert_eq!(a.masks, b.masks);
        let c = generate_synthetic_stack(&SynthSpec { seed: 8, ..spec }).unwrap();
        assert_ne!(a.stack, c.stack);
    }

    #[test]
    fn invalid_specs() {
        for spec in [
            SynthSpec { size: 16, ..SynthSpec::default() },
            SynthSpec { dates: 1, ..SynthSpec::default() },
            SynthSpec { classes: 7, ..SynthSpec::default() },
            SynthSpec {
                perturbations: vec![Perturbation::Haze { date: 5, gamma: 0.5 }],
                ..SynthSpec::default()
            },
        ] {
            assert!(generate_synthetic_stack(&spec).is_err());
        }
    }

    #[test]
    fn perturbation_json_tags() {
        let p: Perturbation = serde_json::from_str(r#"{"kind":"haze","date":1,"gamma":0.7}"#).unwrap();
        assert_eq!(p, Perturbation::Haze { date: 1, gamma: 0.7 });
    }
}
