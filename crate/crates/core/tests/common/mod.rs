#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::Command;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use stbf::registration::AffineTransform;
use stbf::{FilterParams, Raster, RasterStack};

pub fn random_stack(rng: &mut ChaCha8Rng, w: usize, h: usize, bands: usize, dates: usize) -> RasterStack {
    let rasters = (0..dates)
        .map(|k| {
            let s = (0..w * h * bands).map(|_| rng.gen_range(0.0..255.0)).collect();
            Raster::new(w, h, bands, s, format!("t{k}")).unwrap()
        })
        .collect();
    RasterStack::new(rasters).unwrap()
}

/// Direct evaluation of the filter definition, one output sample at a time.
pub fn naive_filter(stack: &RasterStack, params: &FilterParams) -> Vec<Vec<f64>> {
    let (w, h, bands, dates) = (stack.width(), stack.height(), stack.bands(), stack.len());
    let r = (params.window / 2) as i64;

    let mut lo = vec![f64::INFINITY; bands];
    let mut hi = vec![f64::NEG_INFINITY; bands];
    for img in stack.rasters() {
        for b in 0..bands {
            for &v in img.band(b) {
                lo[b] = lo[b].min(v);
                hi[b] = hi[b].max(v);
            }
        }
    }
    let norm = |b: usize, v: f64| if hi[b] > lo[b] { (v - lo[b]) / (hi[b] - lo[b]) } else { 0.0 };

    let mut out = Vec::with_capacity(dates);
    for p in 0..dates {
        let mut samples = vec![0.0; w * h * bands];
        for b in 0..bands {
            for n in 0..h as i64 {
                for m in 0..w as i64 {
                    let mut num = 0.0;
                    let mut den = 0.0;
                    for k in 0..dates {
                        let wt = if params.sigma_t == 0.0 {
                            if k == p { 1.0 } else { 0.0 }
                        } else {
                            let ss: f64 = (0..bands)
                                .map(|c| {
                                    let a = norm(c, stack[p].get(c, m as usize, n as usize));
                                    let z = norm(c, stack[k].get(c, m as usize, n as usize));
                                    (a - z).powi(2)
                                })
                                .sum();
                            let d = (ss / bands as f64).sqrt();
                            (-d / (2.0 * params.sigma_t * params.sigma_t)).exp()
                        };
                        let center = stack[k].get(b, m as usize, n as usize);
                        for j in n - r..=n + r {
                            for i in m - r..=m + r {
                                if i < 0 || j < 0 || i >= w as i64 || j >= h as i64 {
                                    continue;
                                }
                                let v = stack[k].get(b, i as usize, j as usize);
                                let ds = ((i - m).pow(2) + (j - n).pow(2)) as f64;
                                let ws = (-ds / (2.0 * params.sigma_s * params.sigma_s)).exp();
                                let wr = (-(v - center).powi(2) / (2.0 * params.sigma_r * params.sigma_r)).exp();
                                num += ws * wr * wt * v;
                                den += ws * wr * wt;
                            }
                        }
                    }
                    samples[b * w * h + n as usize * w + m as usize] = num / den;
                }
            }
        }
        out.push(samples);
    }
    out
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Smooth random texture: a sum of oriented sinusoids and Gaussian bumps.
pub struct Texture {
    waves: Vec<(f64, f64, f64, f64)>,
    bumps: Vec<(f64, f64, f64, f64)>,
}

impl Texture {
    pub fn random(rng: &mut ChaCha8Rng, size: f64) -> Self {
        let waves = (0..6)
            .map(|_| {
                let theta = rng.gen_range(0.0..std::f64::consts::PI);
                let freq = rng.gen_range(0.02..0.09);
                (freq * theta.cos(), freq * theta.sin(), rng.gen_range(0.0..6.3), rng.gen_range(8.0..25.0))
            })
            .collect();
        let bumps = (0..12)
            .map(|_| {
                (
                    rng.gen_range(0.0..size),
                    rng.gen_range(0.0..size),
                    rng.gen_range(6.0..20.0),
                    rng.gen_range(-40.0..40.0),
                )
            })
            .collect();
        Self { waves, bumps }
    }

    pub fn value(&self, x: f64, y: f64) -> f64 {
        let mut v = 120.0;
        for &(fx, fy, phase, amp) in &self.waves {
            v += amp * (fx * x + fy * y + phase).sin();
        }
        for &(cx, cy, s, amp) in &self.bumps {
            v += amp * (-((x - cx).powi(2) + (y - cy).powi(2)) / (2.0 * s * s)).exp();
        }
        v
    }

    /// Samples the texture at `t(x, y)` for every output pixel.
    pub fn render(&self, size: usize, t: &AffineTransform) -> Raster {
        let mut s = Vec::with_capacity(size * size);
        for y in 0..size {
            for x in 0..size {
                let (u, v) = t.apply(x as f64, y as f64);
                s.push(self.value(u, v));
            }
        }
        Raster::new(size, size, 1, s, "tex").unwrap()
    }
}

/// A reference render and a target render whose coordinates relate by `truth`
/// (reference pixel `x` shows the same point as target pixel `truth(x)`).
pub fn registration_pair(rng: &mut ChaCha8Rng, size: usize) -> (Raster, Raster, AffineTransform) {
    let c = size as f64 / 2.0;
    let truth = AffineTransform::similarity_about(
        c,
        c,
        rng.gen_range(-2.0..2.0),
        rng.gen_range(0.98..1.02),
        rng.gen_range(-3.5..3.5),
        rng.gen_range(-3.5..3.5),
    );
    let texture = Texture::random(rng, size as f64);
    let reference = texture.render(size, &AffineTransform::IDENTITY);
    let target = texture.render(size, &truth.inverse().unwrap());
    (reference, target, truth)
}

pub fn stbf_bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_stbf"))
}

pub fn run_stbf(dir: &Path, args: &[&str]) -> std::process::Output {
    Command::new(stbf_bin()).current_dir(dir).args(args).output().unwrap()
}

/// Every file under `dir` with its bytes, sorted by relative path.
pub fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<(PathBuf, Vec<u8>)>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                out.push((path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out);
    out.sort();
    out
}

/// Runs every CLI command against a fresh directory and returns the resulting files
/// plus each command's stdout.
pub fn cli_session(dir: &Path, threads: usize) -> (Vec<(PathBuf, Vec<u8>)>, Vec<Vec<u8>>) {
    let t = threads.to_string();
    let commands: Vec<Vec<&str>> = vec![
        vec!["synth", "--out", "scene", "--size", "40", "--seed", "9", "--distorted"],
        vec!["register", "--reference", "scene/date0.json", "--target", "scene/date1.json", "--out", "reg/date1.json", "--transform", "reg/t.json"],
        vec!["normalize", "--reference", "scene/date0.json", "--target", "scene/date1.json", "--out", "norm/date1.json", "--model", "norm/model.json"],
        vec!["normalize", "--apply", "norm/model.json", "--target", "scene/date2.json", "--out", "norm/date2.json"],
        vec!["filter", "--manifest", "scene/stack.json", "--out", "filt/stack.json", "--sigma-t", "0.3"],
        vec!["train", "--image", "scene/date0.json", "--mask", "scene/mask0.json", "--out", "model.json", "--sample-per-class", "60", "--seed", "4"],
        vec!["classify", "--model", "model.json", "--image", "scene/date1.json", "--out", "pred/mask1.json", "--map", "pred/map1.ppm"],
        vec!["eval", "--truth", "scene/mask1.json", "--pred", "pred/mask1.json"],
        vec!["eval", "--truth", "scene/mask1.json", "--pred", "pred/mask1.json", "--out", "pred/report.json"],
    ];
    let mut stdouts = Vec::new();
    for args in &commands {
        let mut full = vec!["--threads", t.as_str()];
        full.extend(args);
        let out = run_stbf(dir, &full);
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        stdouts.push(out.stdout);
    }
    // a reduced sweep keeps the session quick
    let cfg_path = dir.join("scene/experiment.json");
    let mut cfg: serde_json::Value = serde_json::from_slice(&std::fs::read(&cfg_path).unwrap()).unwrap();
    cfg["sigma_t_grid"] = serde_json::json!([0.0, 0.4]);
    cfg["svm"]["sample_per_class"] = serde_json::json!(60);
    std::fs::write(&cfg_path, serde_json::to_vec_pretty(&cfg).unwrap()).unwrap();
    let out = run_stbf(dir, &["--threads", t.as_str(), "sweep", "--config", "scene/experiment.json"]);
    assert!(out.status.success(), "sweep: {}", String::from_utf8_lossy(&out.stderr));
    stdouts.push(out.stdout);
    (snapshot(dir), stdouts)
}
