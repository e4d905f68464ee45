//! Raster, stack, and label-mask data model with the raw band-sequential file format.
//!
//! A raster on disk is a small JSON header next to a headerless data file:
//!
//! ```text
//! {"width":W,"height":H,"bands":B,"dtype":"u8"|"u16"|"f32","date":"...","data":"scene.raw"}
//! ```
//!
//! The data file holds all of band 0 (row-major), then band 1, and so on, little-endian.
//! Stacks are JSON manifests `{"rasters":[header, ...]}` listing headers in temporal order;
//! relative paths resolve against the directory of the file that names them.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed header {path}: {message}")]
    Header { path: PathBuf, message: String },
    #[error("unsupported dtype `{0}`")]
    UnsupportedDtype(String),
    #[error("data file {path} has {actual} bytes, expected {expected}")]
    SizeMismatch {
        path: PathBuf,
        expected: u64,
        actual: u64,
    },
    #[error("non-finite sample at index {0}")]
    NonFinite(usize),
    #[error("sample {value} at index {index} is not representable as {dtype}")]
    OutOfRange {
        value: f64,
        index: usize,
        dtype: SampleType,
    },
    #[error("invalid shape: {0}")]
    Shape(String),
    #[error("stack entry {index} ({date}) is {found}, expected {expected}")]
    StackMismatch {
        index: usize,
        date: String,
        found: String,
        expected: String,
    },
    #[error("duplicate date tag `{0}` in stack")]
    DuplicateDate(String),
    #[error("stack must contain at least one raster")]
    EmptyStack,
    #[error("label mask: {0}")]
    Mask(String),
    #[error("no palette entry for class {0}")]
    MissingPalette(u8),
}

pub type Result<T> = std::result::Result<T, RasterError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RasterError + '_ {
    move |source| RasterError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Storage type of samples in the data file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleType {
    U8,
    U16,
    F32,
}

impl SampleType {
    pub fn size(self) -> usize {
        match self {
            SampleType::U8 => 1,
            SampleType::U16 => 2,
            SampleType::F32 => 4,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "u8" => Ok(SampleType::U8),
            "u16" => Ok(SampleType::U16),
            "f32" => Ok(SampleType::F32),
            other => Err(RasterError::UnsupportedDtype(other.to_string())),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SampleType::U8 => "u8",
            SampleType::U16 => "u16",
            SampleType::F32 => "f32",
        }
    }
}

impl std::fmt::Display for SampleType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One date's multi-band image. Samples are band-sequential, each band row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    width: usize,
    height: usize,
    bands: usize,
    samples: Vec<f64>,
    date_tag: String,
    dtype: SampleType,
}

impl Raster {
    pub fn new(
        width: usize,
        height: usize,
        bands: usize,
        samples: Vec<f64>,
        date_tag: impl Into<String>,
    ) -> Result<Self> {
        if width == 0 || height == 0 || bands == 0 {
            return Err(RasterError::Shape(format!(
                "dimensions must be positive, got {width}x{height}x{bands}"
            )));
        }
        let expected = width * height * bands;
        if samples.len() != expected {
            return Err(RasterError::Shape(format!(
                "{} samples for {width}x{height}x{bands} (expected {expected})",
                samples.len()
            )));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(RasterError::NonFinite(i));
        }
        Ok(Self {
            width,
            height,
            bands,
            samples,
            date_tag: date_tag.into(),
            dtype: SampleType::F32,
        })
    }

    /// A raster with every sample set to `value`.
    pub fn filled(
        width: usize,
        height: usize,
        bands: usize,
        value: f64,
        date_tag: impl Into<String>,
    ) -> Result<Self> {
        Self::new(
            width,
            height,
            bands,
            vec![value; width * height * bands],
            date_tag,
        )
    }

    /// Sets the on-disk storage type used by [`write_raster`].
    pub fn with_dtype(mut self, dtype: SampleType) -> Self {
        self.dtype = dtype;
        self
    }

    pub fn with_date_tag(mut self, date_tag: impl Into<String>) -> Self {
        self.date_tag = date_tag.into();
        self
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn date_tag(&self) -> &str {
        &self.date_tag
    }

    pub fn dtype(&self) -> SampleType {
        self.dtype
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn band(&self, b: usize) -> &[f64] {
        let n = self.pixel_count();
        &self.samples[b * n..(b + 1) * n]
    }

    #[inline]
    pub fn get(&self, band: usize, x: usize, y: usize) -> f64 {
        self.samples[(band * self.height + y) * self.width + x]
    }

    /// Band vector of the pixel at `(x, y)`.
    pub fn pixel(&self, x: usize, y: usize) -> Vec<f64> {
        (0..self.bands).map(|b| self.get(b, x, y)).collect()
    }

    pub fn same_shape(&self, other: &Raster) -> bool {
        self.width == other.width && self.height == other.height && self.bands == other.bands
    }

    /// Unweighted mean over bands, as a single-band raster.
    pub fn grayscale(&self) -> Raster {
        let n = self.pixel_count();
        let mut out = vec![0.0; n];
        for b in 0..self.bands {
            for (o, v) in out.iter_mut().zip(self.band(b)) {
                *o += v;
            }
        }
        let inv = 1.0 / self.bands as f64;
        out.iter_mut().for_each(|v| *v *= inv);
        Raster {
            width: self.width,
            height: self.height,
            bands: 1,
            samples: out,
            date_tag: self.date_tag.clone(),
            dtype: SampleType::F32,
        }
    }
}

/// Ordered, co-registered rasters sharing dimensions and band count.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterStack {
    rasters: Vec<Raster>,
}

impl RasterStack {
    pub fn new(rasters: Vec<Raster>) -> Result<Self> {
        let first = rasters.first().ok_or(RasterError::EmptyStack)?;
        let shape = |r: &Raster| format!("{}x{}x{}", r.width, r.height, r.bands);
        let expected = shape(first);
        let mut seen = HashSet::new();
        for (index, r) in rasters.iter().enumerate() {
            if !r.same_shape(first) {
                return Err(RasterError::StackMismatch {
                    index,
                    date: r.date_tag.clone(),
                    found: shape(r),
                    expected,
                });
            }
            if !seen.insert(r.date_tag.as_str()) {
                return Err(RasterError::DuplicateDate(r.date_tag.clone()));
            }
        }
        Ok(Self { rasters })
    }

    pub fn len(&self) -> usize {
        self.rasters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rasters.is_empty()
    }

    pub fn width(&self) -> usize {
        self.rasters[0].width
    }

    pub fn height(&self) -> usize {
        self.rasters[0].height
    }

    pub fn bands(&self) -> usize {
        self.rasters[0].bands
    }

    pub fn rasters(&self) -> &[Raster] {
        &self.rasters
    }

    pub fn into_rasters(self) -> Vec<Raster> {
        self.rasters
    }

    pub fn get(&self, index: usize) -> Option<&Raster> {
        self.rasters.get(index)
    }
}

impl std::ops::Index<usize> for RasterStack {
    type Output = Raster;

    fn index(&self, index: usize) -> &Raster {
        &self.rasters[index]
    }
}

/// Per-pixel class IDs. 0 is unlabeled; 1..=K are classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMask {
    width: usize,
    height: usize,
    labels: Vec<u8>,
}

impl LabelMask {
    pub fn new(width: usize, height: usize, labels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(RasterError::Mask("dimensions must be positive".into()));
        }
        if labels.len() != width * height {
            return Err(RasterError::Mask(format!(
                "{} labels for a {width}x{height} mask",
                labels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            labels,
        })
    }

    /// Converts a single-band raster of integral class IDs into a mask.
    pub fn from_raster(raster: &Raster) -> Result<Self> {
        if raster.bands() != 1 {
            return Err(RasterError::Mask(format!(
                "mask raster must have one band, found {}",
                raster.bands()
            )));
        }
        let labels = raster
            .samples()
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                if v.fract() == 0.0 && (0.0..=255.0).contains(&v) {
                    Ok(v as u8)
                } else {
                    Err(RasterError::Mask(format!(
                        "label {v} at pixel {i} is not a class ID"
                    )))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(raster.width(), raster.height(), labels)
    }

    pub fn to_raster(&self, date_tag: impl Into<String>) -> Raster {
        Raster {
            width: self.width,
            height: self.height,
            bands: 1,
            samples: self.labels.iter().map(|&l| f64::from(l)).collect(),
            date_tag: date_tag.into(),
            dtype: SampleType::U8,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.labels[y * self.width + x]
    }

    /// Largest class ID present (0 if the mask is entirely unlabeled).
    pub fn max_class(&self) -> u8 {
        self.labels.iter().copied().max().unwrap_or(0)
    }

    pub fn labeled_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l != 0).count()
    }

    /// Checks that the nonzero IDs are exactly `1..=K` with `K >= 2`, returning `K`.
    pub fn class_count(&self) -> Result<u8> {
        let mut present = [false; 256];
        for &l in &self.labels {
            present[l as usize] = true;
        }
        let k = self.max_class();
        if k < 2 {
            return Err(RasterError::Mask(format!(
                "at least two classes required, found max class {k}"
            )));
        }
        if let Some(missing) = (1..=k).find(|&c| !present[c as usize]) {
            return Err(RasterError::Mask(format!(
                "class IDs are not contiguous: class {missing} absent below max {k}"
            )));
        }
        Ok(k)
    }

    pub fn same_dims(&self, raster: &Raster) -> bool {
        self.width == raster.width() && self.height == raster.height()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct HeaderFile {
    width: usize,
    height: usize,
    bands: usize,
    dtype: String,
    date: String,
    data: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestFile {
    rasters: Vec<String>,
}

fn resolve(base: &Path, rel: &str) -> PathBuf {
    let p = Path::new(rel);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.parent().unwrap_or(Path::new("")).join(p)
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| RasterError::Header {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Reads a raster from its JSON header. Integer samples load verbatim.
pub fn read_raster(header_path: impl AsRef<Path>) -> Result<Raster> {
    let header_path = header_path.as_ref();
    let header: HeaderFile = read_json(header_path)?;
    let dtype = SampleType::parse(&header.dtype)?;
    if header.width == 0 || header.height == 0 || header.bands == 0 {
        return Err(RasterError::Header {
            path: header_path.to_path_buf(),
            message: "width, height and bands must be positive".into(),
        });
    }
    let data_path = resolve(header_path, &header.data);
    let bytes = fs::read(&data_path).map_err(io_err(&data_path))?;
    let count = header.width * header.height * header.bands;
    let expected = (count * dtype.size()) as u64;
    if bytes.len() as u64 != expected {
        return Err(RasterError::SizeMismatch {
            path: data_path,
            expected,
            actual: bytes.len() as u64,
        });
    }
    let samples: Vec<f64> = match dtype {
        SampleType::U8 => bytes.iter().map(|&v| f64::from(v)).collect(),
        SampleType::U16 => bytes
            .chunks_exact(2)
            .map(|c| f64::from(u16::from_le_bytes([c[0], c[1]])))
            .collect(),
        SampleType::F32 => bytes
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
            .collect(),
    };
    Ok(Raster::new(header.width, header.height, header.bands, samples, header.date)?.with_dtype(dtype))
}

/// Encodes samples in the raster's storage type.
pub fn encode_samples(raster: &Raster) -> Result<Vec<u8>> {
    let dtype = raster.dtype();
    let mut out = Vec::with_capacity(raster.samples().len() * dtype.size());
    for (index, &value) in raster.samples().iter().enumerate() {
        let range_err = || RasterError::OutOfRange {
            value,
            index,
            dtype,
        };
        match dtype {
            SampleType::U8 => {
                if value.fract() != 0.0 || !(0.0..=255.0).contains(&value) {
                    return Err(range_err());
                }
                out.push(value as u8);
            }
            SampleType::U16 => {
                if value.fract() != 0.0 || !(0.0..=65535.0).contains(&value) {
                    return Err(range_err());
                }
                out.extend_from_slice(&(value as u16).to_le_bytes());
            }
            SampleType::F32 => {
                let v = value as f32;
                if !v.is_finite() {
                    return Err(range_err());
                }
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(out)
}

/// Writes `header_path` plus a sibling `<stem>.raw` data file.
pub fn write_raster(raster: &Raster, header_path: impl AsRef<Path>) -> Result<()> {
    let header_path = header_path.as_ref();
    let bytes = encode_samples(raster)?;
    let stem = header_path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| RasterError::Header {
            path: header_path.to_path_buf(),
            message: "header path has no file name".into(),
        })?;
    let data_name = format!("{stem}.raw");
    let header = HeaderFile {
        width: raster.width(),
        height: raster.height(),
        bands: raster.bands(),
        dtype: raster.dtype().as_str().to_string(),
        date: raster.date_tag().to_string(),
        data: data_name.clone(),
    };
    let data_path = resolve(header_path, &data_name);
    fs::write(&data_path, bytes).map_err(io_err(&data_path))?;
    let json = serde_json::to_string_pretty(&header).expect("header serializes");
    fs::write(header_path, json + "\n").map_err(io_err(header_path))
}

pub fn load_stack(manifest_path: impl AsRef<Path>) -> Result<RasterStack> {
    let manifest_path = manifest_path.as_ref();
    let manifest: ManifestFile = read_json(manifest_path)?;
    let rasters = manifest
        .rasters
        .iter()
        .map(|h| read_raster(resolve(manifest_path, h)))
        .collect::<Result<Vec<_>>>()?;
    RasterStack::new(rasters)
}

/// Writes every raster as `<prefix><index>.json` next to the manifest, then the manifest.
pub fn write_stack(stack: &RasterStack, manifest_path: impl AsRef<Path>, prefix: &str) -> Result<Vec<PathBuf>> {
    let manifest_path = manifest_path.as_ref();
    let mut names = Vec::with_capacity(stack.len());
    let mut paths = Vec::with_capacity(stack.len());
    for (i, r) in stack.rasters().iter().enumerate() {
        let name = format!("{prefix}{i}.json");
        let path = resolve(manifest_path, &name);
        write_raster(r, &path)?;
        names.push(name);
        paths.push(path);
    }
    let json = serde_json::to_string_pretty(&ManifestFile { rasters: names }).expect("manifest serializes");
    fs::write(manifest_path, json + "\n").map_err(io_err(manifest_path))?;
    Ok(paths)
}

pub fn read_mask(header_path: impl AsRef<Path>) -> Result<LabelMask> {
    LabelMask::from_raster(&read_raster(header_path)?)
}

pub fn write_mask(mask: &LabelMask, header_path: impl AsRef<Path>, date_tag: &str) -> Result<()> {
    write_raster(&mask.to_raster(date_tag), header_path)
}

/// Class ID to RGB colour.
pub type Palette = BTreeMap<u8, [u8; 3]>;

/// A fixed palette with distinct colours for classes 1..=12.
pub fn default_palette() -> Palette {
    const COLORS: [[u8; 3]; 12] = [
        [0, 128, 0],
        [0, 0, 255],
        [255, 255, 0],
        [255, 0, 0],
        [128, 64, 0],
        [0, 255, 255],
        [255, 0, 255],
        [128, 128, 128],
        [255, 128, 0],
        [128, 0, 128],
        [0, 255, 0],
        [255, 255, 255],
    ];
    COLORS
        .iter()
        .enumerate()
        .map(|(i, &c)| (i as u8 + 1, c))
        .collect()
}

/// Binary P6 encoding of a class map. Unlabeled pixels are black.
pub fn encode_class_map(mask: &LabelMask, palette: &Palette) -> Result<Vec<u8>> {
    let header = format!("P6\n{} {}\n255\n", mask.width(), mask.height());
    let mut out = Vec::with_capacity(header.len() + 3 * mask.labels().len());
    out.extend_from_slice(header.as_bytes());
    for &l in mask.labels() {
        if l == 0 {
            out.extend_from_slice(&[0, 0, 0]);
        } else {
            let rgb = palette.get(&l).ok_or(RasterError::MissingPalette(l))?;
            out.extend_from_slice(rgb);
        }
    }
    Ok(out)
}

pub fn render_class_map(mask: &LabelMask, palette: &Palette, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_class_map(mask, palette)?;
    fs::write(path, bytes).map_err(io_err(path))
}
