use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use stbf::eval::{self, EvalError, EvalReport};
use stbf::filter::{filter_stack, FilterError, FilterParams};
use stbf::pipeline::{self, ExperimentConfig, PipelineError, SynthSpec};
use stbf::radiometry::{self, LinearGainOffset, RadiometryError};
use stbf::raster::{self, RasterError};
use stbf::registration::{self, RegistrationError, RegistrationOptions};
use stbf::svm::{self, SvmError, SvmModel, SvmParams};

#[derive(Parser)]
#[command(name = "stbf", version, about = "Spatiotemporal bilateral filtering toolkit")]
struct Cli {
    /// Worker threads (results do not depend on this).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the affine transform aligning a target raster to a reference, and resample it.
    Register {
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        target: PathBuf,
        /// Where to write the target resampled onto the reference grid.
        #[arg(long)]
        out: PathBuf,
        /// Where to write the transform JSON.
        #[arg(long)]
        transform: Option<PathBuf>,
        #[arg(long, default_value_t = 4)]
        levels: usize,
        #[arg(long, default_value_t = 50)]
        max_iters: usize,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
    },
    /// Match a target raster's per-band mean and spread to a reference.
    Normalize {
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Apply this saved gain/offset model instead of fitting one.
        #[arg(long, conflicts_with = "reference")]
        apply: Option<PathBuf>,
        /// Where to write the fitted model.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Filter every date of a stack.
    Filter {
        #[arg(long)]
        manifest: PathBuf,
        /// Output manifest; filtered rasters are written next to it.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        params: FilterArgs,
    },
    /// Train a one-vs-all RBF SVM on one labeled raster.
    Train {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        svm: SvmArgs,
    },
    /// Classify a raster with a trained model.
    Classify {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// Output label mask header.
        #[arg(long)]
        out: PathBuf,
        /// Optional PPM rendering of the class map.
        #[arg(long)]
        map: Option<PathBuf>,
    },
    /// Score a predicted mask against ground truth.
    Eval {
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        /// Class count; defaults to the largest label in either mask.
        #[arg(long)]
        classes: Option<u8>,
        /// Write the JSON report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run an experiment over a grid of temporal bandwidths.
    Sweep {
        #[arg(long)]
        config: PathBuf,
    },
    /// Write a synthetic labeled stack and a ready-to-run sweep config.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// JSON scene specification; overrides the flags below.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Use the distorted-date scenario (haze and cloud on date 1, noise on date 2).
        #[arg(long)]
        distorted: bool,
    },
}

#[derive(Args)]
struct FilterArgs {
    #[arg(long, default_value_t = 5)]
    window: usize,
    #[arg(long, default_value_t = 7.0)]
    sigma_s: f64,
    #[arg(long, default_value_t = 50.0)]
    sigma_r: f64,
    #[arg(long, default_value_t = 0.2)]
    sigma_t: f64,
}

#[derive(Args)]
struct SvmArgs {
    #[arg(long = "C", default_value_t = 10.0)]
    c: f64,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long, default_value_t = 1e-3)]
    tol: f64,
    #[arg(long, default_value_t = 1000)]
    max_passes: usize,
    #[arg(long, default_value_t = 500)]
    sample_per_class: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl SvmArgs {
    fn params(&self) -> SvmParams {
        SvmParams {
            c: self.c,
            gamma: self.gamma,
            tol: self.tol,
            max_passes: self.max_passes,
            sample_per_class: self.sample_per_class,
            seed: self.seed,
        }
    }
}

/// Exit status 1 for bad inputs, 2 for anything that went wrong while running.
enum Failure {
    Validation(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Validation(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Validation(m) | Failure::Runtime(m) => m,
        }
    }
}

/// Missing inputs count as bad input; other IO trouble is a runtime failure.
fn raster_failure(e: &RasterError) -> bool {
    match e {
        RasterError::Io { source, .. } => source.kind() == std::io::ErrorKind::NotFound,
        _ => true,
    }
}

impl From<RasterError> for Failure {
    fn from(e: RasterError) -> Self {
        if raster_failure(&e) {
            Failure::Validation(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

impl From<FilterError> for Failure {
    fn from(e: FilterError) -> Self {
        match e {
            FilterError::Raster(r) => r.into(),
            FilterError::InvalidParams(_) | FilterError::BandMismatch(..) => Failure::Validation(e.to_string()),
            FilterError::OutOfRange { .. } => Failure::Runtime(e.to_string()),
        }
    }
}

impl From<RegistrationError> for Failure {
    fn from(e: RegistrationError) -> Self {
        match e {
            RegistrationError::Raster(r) => r.into(),
            RegistrationError::Diverged { .. } => Failure::Runtime(e.to_string()),
            _ => Failure::Validation(e.to_string()),
        }
    }
}

impl From<RadiometryError> for Failure {
    fn from(e: RadiometryError) -> Self {
        match e {
            RadiometryError::Raster(r) => r.into(),
            _ => Failure::Validation(e.to_string()),
        }
    }
}

impl From<SvmError> for Failure {
    fn from(e: SvmError) -> Self {
        match e {
            SvmError::Raster(r) => r.into(),
            _ => Failure::Validation(e.to_string()),
        }
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        Failure::Validation(e.to_string())
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        if e.is_validation() {
            Failure::Validation(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

type Outcome = Result<(), Failure>;

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| Failure::Validation(format!("{}: {e}", path.display())))
}

fn read_text(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| {
        let m = format!("cannot read {}: {e}", path.display());
        if e.kind() == std::io::ErrorKind::NotFound {
            Failure::Validation(m)
        } else {
            Failure::Runtime(m)
        }
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Outcome {
    let text = serde_json::to_string_pretty(value).expect("value serializes") + "\n";
    write_text(path, &text)
}

fn write_text(path: &Path, text: &str) -> Outcome {
    pipeline::write_text(path, text).map_err(Failure::from)
}

fn ensure_parent(path: &Path) -> Outcome {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => fs::create_dir_all(dir)
            .map_err(|e| Failure::Runtime(format!("cannot create {}: {e}", dir.display()))),
        _ => Ok(()),
    }
}

fn run(command: Command) -> Outcome {
    match command {
        Command::Register {
            reference,
            target,
            out,
            transform,
            levels,
            max_iters,
            tol,
        } => {
            let reference = raster::read_raster(&reference)?;
            let target = raster::read_raster(&target)?;
            let opts = RegistrationOptions {
                pyramid_levels: levels,
                max_iters,
                tol,
            };
            let t = registration::estimate_affine_intensity(&reference, &target, &opts)?;
            let warped = registration::warp(&target, &t)?.with_date_tag(target.date_tag());
            ensure_parent(&out)?;
            raster::write_raster(&warped, &out)?;
            match transform {
                Some(p) => write_json(&p, &t),
                None => {
                    println!("{}", serde_json::to_string(&t).expect("transform serializes"));
                    Ok(())
                }
            }
        }
        Command::Normalize {
            reference,
            target,
            out,
            apply,
            model,
        } => {
            let target = raster::read_raster(&target)?;
            let fitted: LinearGainOffset = match (apply, reference) {
                (Some(p), _) => {
                    let m: LinearGainOffset = read_json(&p)?;
                    LinearGainOffset::new(m.bands().to_vec())?
                }
                (None, Some(r)) => radiometry::fit_linear_normalization(&raster::read_raster(&r)?, &target)?,
                (None, None) => {
                    return Err(Failure::Validation("normalize needs --reference or --apply".into()));
                }
            };
            let normalized = radiometry::apply_linear_normalization(&target, &fitted)?;
            ensure_parent(&out)?;
            raster::write_raster(&normalized, &out)?;
            if let Some(p) = model {
                write_json(&p, &fitted)?;
            }
            Ok(())
        }
        Command::Filter { manifest, out, params } => {
            let params = FilterParams::new(params.window, params.sigma_s, params.sigma_r, params.sigma_t)?;
            let stack = raster::load_stack(&manifest)?;
            let filtered = filter_stack(&stack, &params)?;
            ensure_parent(&out)?;
            let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("filtered");
            raster::write_stack(&filtered, &out, &format!("{stem}_"))?;
            Ok(())
        }
        Command::Train { image, mask, out, svm } => {
            let params = svm.params();
            params.validate()?;
            let image = raster::read_raster(&image)?;
            let mask = raster::read_mask(&mask)?;
            mask.class_count()?;
            let ts = svm::sample_training(&image, &mask, &params)?;
            let model = svm::train_one_vs_all(&ts, &params)?;
            if !model.converged {
                eprintln!("warning: SMO stopped at max_passes before reaching tol");
            }
            write_text(&out, &model.to_json())
        }
        Command::Classify { model, image, out, map } => {
            let text = read_text(&model)?;
            let model = SvmModel::from_json(&text)?;
            let image = raster::read_raster(&image)?;
            let predicted = svm::classify_raster(&model, &image)?;
            ensure_parent(&out)?;
            raster::write_mask(&predicted, &out, image.date_tag())?;
            if let Some(p) = map {
                ensure_parent(&p)?;
                raster::render_class_map(&predicted, &raster::default_palette(), &p)?;
            }
            Ok(())
        }
        Command::Eval {
            truth,
            pred,
            classes,
            out,
        } => {
            let truth = raster::read_mask(&truth)?;
            let pred = raster::read_mask(&pred)?;
            let k = classes.unwrap_or_else(|| truth.max_class().max(pred.max_class()));
            let cm = eval::confusion_matrix(&truth, &pred, k)?;
            let report = EvalReport::new(&cm);
            match out {
                Some(p) => write_json(&p, &report),
                None => {
                    println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
                    Ok(())
                }
            }
        }
        Command::Sweep { config } => {
            let cfg = ExperimentConfig::from_json_file(&config)?;
            let report = pipeline::run_sweep(&cfg)?;
            eprintln!(
                "{} rows written to {}",
                report.rows.len(),
                cfg.output_dir.join("sweep.csv").display()
            );
            Ok(())
        }
        Command::Synth {
            out,
            spec,
            size,
            seed,
            distorted,
        } => {
            let spec: SynthSpec = match spec {
                Some(p) => read_json(&p)?,
                None if distorted => SynthSpec::distorted_scenario(size, seed),
                None => SynthSpec {
                    size,
                    seed,
                    ..SynthSpec::default()
                },
            };
            let scene = pipeline::generate_synthetic_stack(&spec)?;
            let (manifest, masks) = pipeline::write_scene(&scene, &out)?;
            let name = |p: &Path| PathBuf::from(p.file_name().expect("written file has a name"));
            let cfg = ExperimentConfig {
                manifest: name(&manifest),
                masks: masks.iter().map(|m| Some(name(m))).collect(),
                reference_index: 0,
                sigma_t_grid: pipeline::default_sigma_t_grid(),
                filter: Default::default(),
                svm: SvmParams {
                    seed: spec.seed,
                    ..SvmParams::default()
                },
                mode: pipeline::ModeSelection::Both,
                output_dir: PathBuf::from("results"),
                include_unfiltered: true,
                seed: spec.seed,
            };
            write_json(&out.join("experiment.json"), &cfg)?;
            write_json(&out.join("spec.json"), &spec)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
