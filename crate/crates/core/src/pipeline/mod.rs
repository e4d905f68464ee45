//! Experiment orchestration: per-date and transfer-learning classification of filtered
//! stacks, swept over the temporal bandwidth.

pub mod synth;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{self, ConfusionMatrix, EvalError};
use crate::filter::{filter_stack, FilterError, FilterParams};
use crate::raster::{self, LabelMask, RasterError, RasterStack};
use crate::svm::{self, SvmError, SvmModel, SvmParams};

pub use synth::{generate_synthetic_stack, Perturbation, SynthSpec, SyntheticScene};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("date {date} has no mask")]
    MissingMask { date: String },
    #[error("mask of date {date} lacks class {class}")]
    MissingClass { date: String, class: u8 },
    #[error("mask of date {date}: {source}")]
    Mask {
        date: String,
        #[source]
        source: RasterError,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Svm(#[from] SvmError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

impl PipelineError {
    /// Whether the failure is a problem with the supplied inputs rather than execution.
    pub fn is_validation(&self) -> bool {
        match self {
            PipelineError::Config(_)
            | PipelineError::MissingMask { .. }
            | PipelineError::MissingClass { .. }
            | PipelineError::Mask { .. } => true,
            PipelineError::Filter(FilterError::InvalidParams(_)) => true,
            PipelineError::Svm(SvmError::InvalidParams(_) | SvmError::MissingClass { .. }) => true,
            PipelineError::Raster(RasterError::Io { source, .. }) | PipelineError::Io { source, .. } => {
                source.kind() == std::io::ErrorKind::NotFound
            }
            PipelineError::Raster(_) => true,
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, PipelineError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Individual,
    Transfer,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Individual => "individual",
            Mode::Transfer => "transfer",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeSelection {
    Individual,
    Transfer,
    Both,
}

impl ModeSelection {
    pub fn modes(self) -> &'static [Mode] {
        match self {
            ModeSelection::Individual => &[Mode::Individual],
            ModeSelection::Transfer => &[Mode::Transfer],
            ModeSelection::Both => &[Mode::Individual, Mode::Transfer],
        }
    }
}

/// Spatial and range settings shared by every sweep point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterSettings {
    pub window: usize,
    pub sigma_s: f64,
    pub sigma_r: f64,
}

impl Default for FilterSettings {
    fn default() -> Self {
        let d = FilterParams::default();
        Self {
            window: d.window,
            sigma_s: d.sigma_s,
            sigma_r: d.sigma_r,
        }
    }
}

impl FilterSettings {
    pub fn with_sigma_t(&self, sigma_t: f64) -> FilterParams {
        FilterParams {
            window: self.window,
            sigma_s: self.sigma_s,
            sigma_r: self.sigma_r,
            sigma_t,
        }
    }
}

/// The temporal bandwidth grid `0, 0.1, ..., 0.9`.
pub fn default_sigma_t_grid() -> Vec<f64> {
    (0..10).map(|i| f64::from(i) / 10.0).collect()
}

fn default_true() -> bool {
    true
}

/// JSON document driving `stbf sweep`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub manifest: PathBuf,
    /// One mask header per date (`null` for dates without ground truth).
    pub masks: Vec<Option<PathBuf>>,
    #[serde(default)]
    pub reference_index: usize,
    #[serde(default = "default_sigma_t_grid")]
    pub sigma_t_grid: Vec<f64>,
    #[serde(default)]
    pub filter: FilterSettings,
    #[serde(default)]
    pub svm: SvmParams,
    #[serde(default = "default_mode")]
    pub mode: ModeSelection,
    pub output_dir: PathBuf,
    #[serde(default = "default_true")]
    pub include_unfiltered: bool,
    /// Overrides `svm.seed`; the only source of randomness.
    #[serde(default)]
    pub seed: u64,
}

fn default_mode() -> ModeSelection {
    ModeSelection::Both
}

/// Sweep settings independent of where the inputs live.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSettings {
    pub reference_index: usize,
    pub sigma_t_grid: Vec<f64>,
    pub filter: FilterSettings,
    pub svm: SvmParams,
    pub mode: ModeSelection,
    pub include_unfiltered: bool,
}

impl SweepSettings {
    pub fn validate(&self, dates: usize) -> Result<()> {
        if self.reference_index >= dates {
            return Err(PipelineError::Config(format!(
                "reference_index {} out of range for {dates} dates",
                self.reference_index
            )));
        }
        if self.sigma_t_grid.is_empty() {
            return Err(PipelineError::Config("sigma_t_grid is empty".into()));
        }
        if self.sigma_t_grid.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(PipelineError::Config(
                "sigma_t_grid must be sorted ascending without duplicates".into(),
            ));
        }
        for &st in &self.sigma_t_grid {
            self.filter.with_sigma_t(st).validate()?;
        }
        self.svm.validate()?;
        Ok(())
    }
}

impl ExperimentConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| PipelineError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg: ExperimentConfig =
            serde_json::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        // Relative paths are taken relative to the config file.
        let base = path.parent().unwrap_or(Path::new(""));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut cfg.manifest);
        fix(&mut cfg.output_dir);
        cfg.masks.iter_mut().flatten().for_each(fix);
        Ok(cfg)
    }

    pub fn settings(&self) -> SweepSettings {
        SweepSettings {
            reference_index: self.reference_index,
            sigma_t_grid: self.sigma_t_grid.clone(),
            filter: self.filter,
            svm: SvmParams {
                seed: self.seed,
                ..self.svm
            },
            mode: self.mode,
            include_unfiltered: self.include_unfiltered,
        }
    }
}

/// Scores of one classified date.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageResult {
    pub image: usize,
    pub mode: Mode,
    pub confusion: ConfusionMatrix,
    pub overall: f64,
    pub kappa: f64,
    pub per_class: Vec<Option<f64>>,
    pub predicted: LabelMask,
}

impl ImageResult {
    fn new(image: usize, mode: Mode, truth: &LabelMask, predicted: LabelMask, classes: u8) -> Result<Self> {
        let cm = eval::confusion_matrix(truth, &predicted, classes)?;
        Ok(Self {
            image,
            mode,
            overall: eval::overall_accuracy(&cm),
            kappa: eval::cohen_kappa(&cm),
            per_class: eval::per_class_accuracy(&cm),
            confusion: cm,
            predicted,
        })
    }
}

fn require_mask<'m>(stack: &RasterStack, masks: &'m [Option<LabelMask>], date: usize) -> Result<&'m LabelMask> {
    let tag = stack[date].date_tag().to_string();
    let mask = masks
        .get(date)
        .and_then(Option::as_ref)
        .ok_or_else(|| PipelineError::MissingMask { date: tag.clone() })?;
    if !mask.same_dims(&stack[date]) {
        return Err(PipelineError::Config(format!(
            "mask of date {tag} is {}x{}, image is {}x{}",
            mask.width(),
            mask.height(),
            stack.width(),
            stack.height()
        )));
    }
    Ok(mask)
}

/// Largest class ID over every supplied mask.
pub fn class_count(masks: &[Option<LabelMask>]) -> u8 {
    masks.iter().flatten().map(LabelMask::max_class).max().unwrap_or(0)
}

/// Checks that a training mask contains every class `1..=classes`.
fn check_training_mask(stack: &RasterStack, mask: &LabelMask, date: usize, classes: u8) -> Result<()> {
    let mut present = [false; 256];
    for &l in mask.labels() {
        present[l as usize] = true;
    }
    if let Some(class) = (1..=classes).find(|&c| !present[c as usize]) {
        return Err(PipelineError::MissingClass {
            date: stack[date].date_tag().to_string(),
            class,
        });
    }
    Ok(())
}

fn train_on(stack: &RasterStack, masks: &[Option<LabelMask>], date: usize, classes: u8, params: &SvmParams) -> Result<SvmModel> {
    let mask = require_mask(stack, masks, date)?;
    check_training_mask(stack, mask, date, classes)?;
    let ts = svm::sample_training(&stack[date], mask, params)?;
    Ok(svm::train_one_vs_all(&ts, params)?)
}

/// Trains on each date's own mask and scores that date.
pub fn run_individual(stack: &RasterStack, masks: &[Option<LabelMask>], params: &SvmParams) -> Result<Vec<ImageResult>> {
    let classes = class_count(masks);
    (0..stack.len())
        .map(|date| {
            let model = train_on(stack, masks, date, classes, params)?;
            let predicted = svm::classify_raster(&model, &stack[date])?;
            ImageResult::new(date, Mode::Individual, require_mask(stack, masks, date)?, predicted, classes)
        })
        .collect()
}

/// Trains once on the reference date and scores every date with a mask.
pub fn run_transfer(
    stack: &RasterStack,
    masks: &[Option<LabelMask>],
    reference_index: usize,
    params: &SvmParams,
) -> Result<Vec<ImageResult>> {
    if reference_index >= stack.len() {
        return Err(PipelineError::Config(format!(
            "reference_index {reference_index} out of range for {} dates",
            stack.len()
        )));
    }
    let classes = class_count(masks);
    let model = train_on(stack, masks, reference_index, classes, params)?;
    (0..stack.len())
        .map(|date| {
            let truth = require_mask(stack, masks, date)?;
            let predicted = svm::classify_raster(&model, &stack[date])?;
            ImageResult::new(date, Mode::Transfer, truth, predicted, classes)
        })
        .collect()
}

/// One CSV row: a date classified in one mode after filtering with `sigma_t`
/// (`None` for the unfiltered stack).
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub sigma_t: Option<f64>,
    pub image: usize,
    pub mode: Mode,
    pub overall: f64,
    pub kappa: f64,
    pub per_class: Vec<Option<f64>>,
}

impl SweepRow {
    fn from_result(sigma_t: Option<f64>, r: &ImageResult) -> Self {
        Self {
            sigma_t,
            image: r.image,
            mode: r.mode,
            overall: r.overall,
            kappa: r.kappa,
            per_class: r.per_class.clone(),
        }
    }

    pub fn sigma_label(&self) -> String {
        sigma_label(self.sigma_t)
    }
}

pub fn sigma_label(sigma_t: Option<f64>) -> String {
    sigma_t.map_or_else(|| "original".to_string(), |s| format!("{s}"))
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepReport {
    pub classes: u8,
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    pub fn find(&self, sigma_t: Option<f64>, image: usize, mode: Mode) -> Option<&SweepRow> {
        self.rows
            .iter()
            .find(|r| r.sigma_t == sigma_t && r.image == image && r.mode == mode)
    }

    pub fn csv_header(classes: u8) -> Vec<String> {
        let mut h: Vec<String> = ["sigma_t", "image", "mode", "overall", "kappa"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        h.extend((1..=classes).map(|c| format!("acc_class_{c}")));
        h
    }

    fn csv_record(row: &SweepRow) -> Vec<String> {
        let mut rec = vec![
            row.sigma_label(),
            row.image.to_string(),
            row.mode.as_str().to_string(),
            row.overall.to_string(),
            row.kappa.to_string(),
        ];
        rec.extend(row.per_class.iter().map(|a| a.map_or_else(|| "NA".to_string(), |v| v.to_string())));
        rec
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(Self::csv_header(self.classes))?;
        for row in &self.rows {
            w.write_record(Self::csv_record(row))?;
        }
        let bytes = w.into_inner().map_err(|e| PipelineError::Config(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv is utf-8"))
    }
}

/// Receives completed sweep groups in order.
pub trait SweepSink {
    fn begin(&mut self, classes: u8) -> Result<()>;
    fn group(&mut self, sigma_t: Option<f64>, results: &[ImageResult]) -> Result<()>;
}

impl SweepSink for () {
    fn begin(&mut self, _: u8) -> Result<()> {
        Ok(())
    }

    fn group(&mut self, _: Option<f64>, _: &[ImageResult]) -> Result<()> {
        Ok(())
    }
}

/// Writes `sweep.csv` (flushed after every group) and one PPM class map per row.
pub struct DirectorySink {
    dir: PathBuf,
    writer: Option<csv::Writer<fs::File>>,
    palette: raster::Palette,
}

impl DirectorySink {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|source| PipelineError::Io {
            path: dir.clone(),
            source,
        })?;
        Ok(Self {
            dir,
            writer: None,
            palette: raster::default_palette(),
        })
    }

    pub fn csv_path(&self) -> PathBuf {
        self.dir.join("sweep.csv")
    }

    pub fn map_path(&self, sigma_t: Option<f64>, image: usize, mode: Mode) -> PathBuf {
        let label = sigma_t.map_or_else(|| "original".to_string(), |s| format!("st{s}"));
        self.dir.join(format!("map_{label}_img{image}_{}.ppm", mode.as_str()))
    }
}

impl SweepSink for DirectorySink {
    fn begin(&mut self, classes: u8) -> Result<()> {
        let mut w = csv::Writer::from_path(self.csv_path())?;
        w.write_record(SweepReport::csv_header(classes))?;
        w.flush().map_err(|source| PipelineError::Io {
            path: self.csv_path(),
            source,
        })?;
        self.writer = Some(w);
        Ok(())
    }

    fn group(&mut self, sigma_t: Option<f64>, results: &[ImageResult]) -> Result<()> {
        let path = self.csv_path();
        let maps: Vec<PathBuf> = results.iter().map(|r| self.map_path(sigma_t, r.image, r.mode)).collect();
        let w = self
            .writer
            .as_mut()
            .ok_or_else(|| PipelineError::Config("sink not started".into()))?;
        for (r, map) in results.iter().zip(maps) {
            w.write_record(SweepReport::csv_record(&SweepRow::from_result(sigma_t, r)))?;
            raster::render_class_map(&r.predicted, &self.palette, map)?;
        }
        w.flush().map_err(|source| PipelineError::Io { path, source })
    }
}

fn run_modes(stack: &RasterStack, masks: &[Option<LabelMask>], settings: &SweepSettings) -> Result<Vec<ImageResult>> {
    let mut out = Vec::new();
    for &mode in settings.mode.modes() {
        let mut rows = match mode {
            Mode::Individual => run_individual(stack, masks, &settings.svm)?,
            Mode::Transfer => run_transfer(stack, masks, settings.reference_index, &settings.svm)?,
        };
        out.append(&mut rows);
    }
    // image-major, then mode
    out.sort_by_key(|r| (r.image, r.mode));
    Ok(out)
}

/// Runs the unfiltered baseline (optionally) and each grid point, filtering the original
/// stack once per `sigma_t`. Masks stay those of the original dates.
pub fn sweep(
    stack: &RasterStack,
    masks: &[Option<LabelMask>],
    settings: &SweepSettings,
    sink: &mut dyn SweepSink,
) -> Result<SweepReport> {
    settings.validate(stack.len())?;
    if masks.len() != stack.len() {
        return Err(PipelineError::Config(format!(
            "{} masks for {} dates",
            masks.len(),
            stack.len()
        )));
    }
    let classes = class_count(masks);
    if classes < 2 {
        return Err(PipelineError::Config("masks contain fewer than two classes".into()));
    }
    let mut report = SweepReport {
        classes,
        rows: Vec::new(),
    };
    sink.begin(classes)?;
    let mut points: Vec<Option<f64>> = Vec::new();
    if settings.include_unfiltered {
        points.push(None);
    }
    points.extend(settings.sigma_t_grid.iter().map(|&s| Some(s)));
    for sigma_t in points {
        let results = match sigma_t {
            None => run_modes(stack, masks, settings)?,
            Some(st) => {
                let filtered = filter_stack(stack, &settings.filter.with_sigma_t(st))?;
                run_modes(&filtered, masks, settings)?
            }
        };
        sink.group(sigma_t, &results)?;
        report
            .rows
            .extend(results.iter().map(|r| SweepRow::from_result(sigma_t, r)));
    }
    Ok(report)
}

/// Loads the inputs named by `config`, sweeps, and writes the CSV and class maps to its
/// output directory.
pub fn run_sweep(config: &ExperimentConfig) -> Result<SweepReport> {
    let stack = raster::load_stack(&config.manifest)?;
    if config.masks.len() != stack.len() {
        return Err(PipelineError::Config(format!(
            "{} mask entries for {} dates",
            config.masks.len(),
            stack.len()
        )));
    }
    let masks = config
        .masks
        .iter()
        .enumerate()
        .map(|(i, p)| {
            p.as_ref()
                .map(|p| {
                    raster::read_mask(p).map_err(|source| PipelineError::Mask {
                        date: stack[i].date_tag().to_string(),
                        source,
                    })
                })
                .transpose()
        })
        .collect::<Result<Vec<_>>>()?;
    let settings = config.settings();
    settings.validate(stack.len())?;
    let mut sink = DirectorySink::new(&config.output_dir)?;
    sweep(&stack, &masks, &settings, &mut sink)
}

/// Mean within-class variance (averaged over bands) per date and class, to help pick a
/// reference date whose classes are spectrally compact.
pub fn class_color_variance(stack: &RasterStack, mask: &LabelMask) -> Result<Vec<Vec<Option<f64>>>> {
    let k = mask.max_class() as usize;
    if !mask.same_dims(&stack[0]) {
        return Err(PipelineError::Config("mask does not match stack dimensions".into()));
    }
    Ok(stack
        .rasters()
        .iter()
        .map(|img| {
            (1..=k as u8)
                .map(|class| {
                    let idx: Vec<usize> = mask
                        .labels()
                        .iter()
                        .enumerate()
                        .filter(|(_, &l)| l == class)
                        .map(|(i, _)| i)
                        .collect();
                    if idx.is_empty() {
                        return None;
                    }
                    let var: f64 = (0..img.bands())
                        .map(|b| {
                            let band = img.band(b);
                            let n = idx.len() as f64;
                            let mean = idx.iter().map(|&i| band[i]).sum::<f64>() / n;
                            idx.iter().map(|&i| (band[i] - mean).powi(2)).sum::<f64>() / n
                        })
                        .sum::<f64>()
                        / img.bands() as f64;
                    Some(var)
                })
                .collect()
        })
        .collect())
}

/// Writes a synthetic scene as a stack manifest plus one mask per date; returns the
/// manifest path and the mask header paths.
pub fn write_scene(scene: &SyntheticScene, dir: &Path) -> Result<(PathBuf, Vec<PathBuf>)> {
    fs::create_dir_all(dir).map_err(|source| PipelineError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let manifest = dir.join("stack.json");
    raster::write_stack(&scene.stack, &manifest, "date")?;
    let mut masks = Vec::new();
    for (i, m) in scene.masks.iter().enumerate() {
        let p = dir.join(format!("mask{i}.json"));
        raster::write_mask(m, &p, scene.stack[i].date_tag())?;
        masks.push(p);
    }
    Ok((manifest, masks))
}

/// Writes `text` to `path`, creating parent directories.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|source| PipelineError::Io {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    let mut f = fs::File::create(path).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    f.write_all(text.as_bytes()).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_svm() -> SvmParams {
        SvmParams {
            sample_per_class: 60,
            seed: 3,
            ..SvmParams::default()
        }
    }

    fn identical_scene() -> SyntheticScene {
        generate_synthetic_stack(&SynthSpec {
            size: 32,
            dates: 3,
            seed: 5,
            ..SynthSpec::default()
        })
        .unwrap()
    }

    fn masks_of(scene: &SyntheticScene) -> Vec<Option<LabelMask>> {
        scene.masks.iter().cloned().map(Some).collect()
    }

    #[test]
    fn identical_dates_give_identical_rows() {
        let scene = identical_scene();
        let masks = masks_of(&scene);
        let ind = run_individual(&scene.stack, &masks, &small_svm()).unwrap();
        let tr = run_transfer(&scene.stack, &masks, 1, &small_svm()).unwrap();
        for (a, b) in ind.iter().zip(&tr) {
            assert_eq!(a.overall, ind[0].overall);
            assert_eq!(a.overall, b.overall);
            assert_eq!(a.confusion, b.confusion);
        }
    }

    #[test]
    fn missing_class_names_date() {
        let scene = identical_scene();
        let mut masks = masks_of(&scene);
        let broken: Vec<u8> = scene.masks[1]
            .labels()
            .iter()
            .map(|&l| if l == 2 { 0 } else { l })
            .collect();
        masks[1] = Some(LabelMask::new(32, 32, broken).unwrap());
        let err = run_individual(&scene.stack, &masks, &small_svm()).unwrap_err();
        match err {
            PipelineError::MissingClass { date, class } => {
                assert_eq!(date, "date-1");
                assert_eq!(class, 2);
            }
            other => panic!("unexpected {other}"),
        }
        masks[1] = None;
        assert!(matches!(
            run_individual(&scene.stack, &masks, &small_svm()),
            Err(PipelineError::MissingMask { .. })
        ));
    }

    #[test]
    fn sweep_row_count_and_order() {
        let scene = identical_scene();
        let masks = masks_of(&scene);
        let settings = SweepSettings {
            reference_index: 0,
            sigma_t_grid: vec![0.0, 0.2],
            filter: FilterSettings::default(),
            svm: small_svm(),
            mode: ModeSelection::Both,
            include_unfiltered: true,
        };
        let report = sweep(&scene.stack, &masks, &settings, &mut ()).unwrap();
        assert_eq!(report.rows.len(), 3 * 3 * 2);
        let csv = report.to_csv().unwrap();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "sigma_t,image,mode,overall,kappa,acc_class_1,acc_class_2,acc_class_3,acc_class_4"
        );
        assert!(lines.next().unwrap().starts_with("original,0,individual,"));
        assert!(lines.next().unwrap().starts_with("original,0,transfer,"));
        // filtered identical dates: accuracy does not depend on sigma_t
        let a = report.find(Some(0.0), 1, Mode::Transfer).unwrap();
        let b = report.find(Some(0.2), 1, Mode::Transfer).unwrap();
        assert_eq!(a.overall, b.overall);
    }

    #[test]
    fn settings_validation() {
        let base = SweepSettings {
            reference_index: 0,
            sigma_t_grid: vec![0.1, 0.2],
            filter: FilterSettings::default(),
            svm: SvmParams::default(),
            mode: ModeSelection::Both,
            include_unfiltered: false,
        };
        assert!(base.validate(2).is_ok());
        for bad in [
            SweepSettings { reference_index: 2, ..base.clone() },
            SweepSettings { sigma_t_grid: vec![], ..base.clone() },
            SweepSettings { sigma_t_grid: vec![0.2, 0.1], ..base.clone() },
            SweepSettings { sigma_t_grid: vec![0.1, 0.1], ..base.clone() },
            SweepSettings { sigma_t_grid: vec![-0.1], ..base.clone() },
        ] {
            let err = bad.validate(2).unwrap_err();
            assert!(err.is_validation(), "{err}");
        }
    }

    #[test]
    fn config_json_defaults() {
        let cfg: ExperimentConfig = serde_json::from_str(
            r#"{"manifest":"s.json","masks":["m0.json",null],"output_dir":"out","seed":4}"#,
        )
        .unwrap();
        assert_eq!(cfg.sigma_t_grid, default_sigma_t_grid());
        assert_eq!(cfg.mode, ModeSelection::Both);
        assert!(cfg.include_unfiltered);
        assert_eq!(cfg.settings().svm.seed, 4);
        assert_eq!(cfg.filter, FilterSettings::default());
    }

    #[test]
    fn color_variance_per_class() {
        let scene = identical_scene();
        let v = class_color_variance(&scene.stack, &scene.masks[0]).unwrap();
        assert_eq!(v.len(), 3);
        assert_eq!(v[0].len(), 4);
        assert_eq!(v[0], v[2]);
        assert!(v[0].iter().all(|x| x.unwrap() > 0.0));
    }
}
