//! Raster types and their on-disk formats.
//!
//! Probability and score maps use the RAST container: an 8-byte magic
//! `RASTv001`, three little-endian `u32` dimensions (H, W, C) and then
//! `H·W·C` little-endian `f32` values, row-major with the class axis varying
//! fastest. Label masks are 8-bit binary PGM (P5) images.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const RAST_MAGIC: &[u8; 8] = b"RASTv001";
pub const RAST_HEADER_LEN: usize = 20;

/// Default on-disk value marking out-of-distribution pixels in a mask.
pub const DEFAULT_OOD_LABEL: u8 = 254;
/// Default on-disk value marking pixels excluded from every evaluation.
pub const DEFAULT_IGNORE_LABEL: u8 = 255;

/// Maximum tolerated deviation of a pixel's probability sum from one.
pub const PROB_SUM_TOLERANCE: f64 = 1e-5;

/// Raw contents of a RAST file.
#[derive(Debug, Clone, PartialEq)]
pub struct Rast {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Rast {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(RAST_HEADER_LEN + 4 * self.data.len());
        out.extend_from_slice(RAST_MAGIC);
        for d in [self.height, self.width, self.channels] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < RAST_HEADER_LEN {
            return Err(Error::Format(format!(
                "RAST header truncated ({} bytes)",
                bytes.len()
            )));
        }
        if &bytes[..8] != RAST_MAGIC {
            return Err(Error::Format("bad RAST magic".into()));
        }
        let dim = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
        let (height, width, channels) = (dim(8), dim(12), dim(16));
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::Format(format!(
                "zero dimension in RAST header {height}x{width}x{channels}"
            )));
        }
        let count = height
            .checked_mul(width)
            .and_then(|n| n.checked_mul(channels))
            .ok_or_else(|| Error::Format("RAST dimension overflow".into()))?;
        let expected = count
            .checked_mul(4)
            .and_then(|n| n.checked_add(RAST_HEADER_LEN))
            .ok_or_else(|| Error::Format("RAST dimension overflow".into()))?;
        if bytes.len() != expected {
            return Err(Error::Format(format!(
                "RAST payload size {} does not match header {height}x{width}x{channels}",
                bytes.len() - RAST_HEADER_LEN
            )));
        }
        let data = bytes[RAST_HEADER_LEN..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Rast {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }
}

/// Writes `bytes` to a temporary file next to `path` and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if path.as_os_str().is_empty() {
        return Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "empty path"),
        ));
    }
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(|e| Error::io(&dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

/// Per-pixel class probabilities `p(c | x)` of an H×W image.
///
/// The `f32` payload is kept exactly as stored on disk; probabilities are
/// served through [`ProbabilityMap::prob`] and friends, renormalized so each
/// pixel sums to one in `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMap {
    height: usize,
    width: usize,
    num_classes: usize,
    raw: Vec<f32>,
    inv_sum: Vec<f64>,
}

impl ProbabilityMap {
    /// Validates an `f32` payload laid out row-major with classes fastest.
    pub fn from_f32(
        height: usize,
        width: usize,
        num_classes: usize,
        raw: Vec<f32>,
    ) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidProbabilities(format!(
                "empty raster {height}x{width}"
            )));
        }
        if num_classes < 2 {
            return Err(Error::InvalidProbabilities(format!(
                "need at least 2 classes, got {num_classes}"
            )));
        }
        let n = height
            .checked_mul(width)
            .and_then(|n| n.checked_mul(num_classes))
            .ok_or_else(|| Error::Format("dimension overflow".into()))?;
        if raw.len() != n {
            return Err(Error::dims(format!(
                "payload of {} values for {height}x{width}x{num_classes}",
                raw.len()
            )));
        }
        let mut inv_sum = Vec::with_capacity(height * width);
        for (idx, px) in raw.chunks_exact(num_classes).enumerate() {
            let (row, col) = (idx / width, idx % width);
            let mut sum = 0.0f64;
            for (class, &v) in px.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::NonFinite { row, col, class });
                }
                let v = v as f64;
                if !(0.0..=1.0 + PROB_SUM_TOLERANCE).contains(&v) {
                    return Err(Error::InvalidProbabilities(format!(
                        "value {v} out of [0,1] at ({row},{col},{class})"
                    )));
                }
                sum += v;
            }
            if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
                return Err(Error::InvalidProbabilities(format!(
                    "pixel ({row},{col}) sums to {sum}"
                )));
            }
            inv_sum.push(1.0 / sum);
        }
        Ok(Self {
            height,
            width,
            num_classes,
            raw,
            inv_sum,
        })
    }

    /// Builds a map from `f64` probabilities; values are stored in single precision.
    pub fn from_f64(
        height: usize,
        width: usize,
        num_classes: usize,
        values: &[f64],
    ) -> Result<Self> {
        Self::from_f32(
            height,
            width,
            num_classes,
            values.iter().map(|&v| v as f32).collect(),
        )
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn raw(&self) -> &[f32] {
        &self.raw
    }

    #[inline]
    pub fn prob(&self, row: usize, col: usize, class: usize) -> f64 {
        let idx = row * self.width + col;
        self.raw[idx * self.num_classes + class] as f64 * self.inv_sum[idx]
    }

    /// Fills `out` with the normalized probabilities of pixel `idx` (row-major index).
    #[inline]
    pub fn pixel_into(&self, idx: usize, out: &mut [f64]) {
        let s = self.inv_sum[idx];
        let px = &self.raw[idx * self.num_classes..(idx + 1) * self.num_classes];
        for (o, &v) in out.iter_mut().zip(px) {
            *o = v as f64 * s;
        }
    }

    pub fn pixel(&self, row: usize, col: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.num_classes];
        self.pixel_into(row * self.width + col, &mut out);
        out
    }

    pub fn to_rast(&self) -> Rast {
        Rast {
            height: self.height,
            width: self.width,
            channels: self.num_classes,
            data: self.raw.clone(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_rast().write(path)
    }
}

pub fn load_probability_map(path: &Path) -> Result<ProbabilityMap> {
    let r = Rast::read(path)?;
    ProbabilityMap::from_f32(r.height, r.width, r.channels, r.data)
}

/// Ground-truth label of one pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Class(u8),
    Ood,
    Ignore,
}

/// How on-disk mask values map to [`Label`]s.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LabelConfig {
    pub num_classes: usize,
    pub ood_label: u8,
    pub ignore_label: u8,
}

impl LabelConfig {
    pub fn new(num_classes: usize) -> Self {
        Self {
            num_classes,
            ood_label: DEFAULT_OOD_LABEL,
            ignore_label: DEFAULT_IGNORE_LABEL,
        }
    }

    pub fn decode(&self, value: u8) -> Result<Label> {
        if value == self.ood_label {
            Ok(Label::Ood)
        } else if value == self.ignore_label {
            Ok(Label::Ignore)
        } else if (value as usize) < self.num_classes {
            Ok(Label::Class(value))
        } else {
            Err(Error::UnknownLabel(value as u32))
        }
    }

    pub fn encode(&self, label: Label) -> u8 {
        match label {
            Label::Class(c) => c,
            Label::Ood => self.ood_label,
            Label::Ignore => self.ignore_label,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMask {
    height: usize,
    width: usize,
    labels: Vec<Label>,
}

impl LabelMask {
    pub fn new(height: usize, width: usize, labels: Vec<Label>) -> Result<Self> {
        if height == 0 || width == 0 || labels.len() != height * width {
            return Err(Error::dims(format!(
                "{} labels for a {height}x{width} mask",
                labels.len()
            )));
        }
        Ok(Self {
            height,
            width,
            labels,
        })
    }

    pub fn filled(height: usize, width: usize, label: Label) -> Self {
        Self {
            height,
            width,
            labels: vec![label; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> Label {
        self.labels[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, label: Label) {
        self.labels[row * self.width + col] = label;
    }

    pub fn is_ood(&self, row: usize, col: usize) -> bool {
        self.get(row, col) == Label::Ood
    }

    pub fn ood_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l == Label::Ood).count()
    }

    pub fn to_pgm(&self, cfg: &LabelConfig) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.labels.iter().map(|&l| cfg.encode(l)));
        out
    }

    pub fn save(&self, path: &Path, cfg: &LabelConfig) -> Result<()> {
        write_atomic(path, &self.to_pgm(cfg))
    }
}

fn parse_pgm(bytes: &[u8]) -> Result<(usize, usize, &[u8])> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(Error::Format("not a binary PGM (P5)".into()));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("truncated PGM header".into()));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .unwrap()
            .parse()
            .map_err(|_| Error::Format("PGM header value out of range".into()))?;
    }
    let [width, height, maxval] = fields;
    if maxval == 0 || maxval > 255 {
        return Err(Error::Format(format!("unsupported PGM maxval {maxval}")));
    }
    if !bytes.get(pos).is_some_and(|b| b.is_ascii_whitespace()) {
        return Err(Error::Format("missing whitespace after PGM header".into()));
    }
    pos += 1;
    let n = width
        .checked_mul(height)
        .ok_or_else(|| Error::Format("PGM dimension overflow".into()))?;
    if width == 0 || height == 0 || bytes.len() - pos != n {
        return Err(Error::Format(format!(
            "PGM payload of {} bytes for {width}x{height}",
            bytes.len() - pos
        )));
    }
    Ok((height, width, &bytes[pos..]))
}

pub fn decode_mask(
    bytes: &[u8],
    cfg: &LabelConfig,
    expected: Option<(usize, usize)>,
) -> Result<LabelMask> {
    let (height, width, data) = parse_pgm(bytes)?;
    if let Some((h, w)) = expected {
        if (h, w) != (height, width) {
            return Err(Error::dims(format!(
                "mask is {height}x{width}, expected {h}x{w}"
            )));
        }
    }
    let labels = data
        .iter()
        .map(|&v| cfg.decode(v))
        .collect::<Result<Vec<_>>>()?;
    LabelMask::new(height, width, labels)
}

pub fn load_mask(
    path: &Path,
    cfg: &LabelConfig,
    expected: Option<(usize, usize)>,
) -> Result<LabelMask> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_mask(&bytes, cfg, expected)
}

/// Per-pixel anomaly scores in `[0, 1]`, stored in single precision.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMap {
    height: usize,
    width: usize,
    scores: Vec<f32>,
}

impl ScoreMap {
    /// Builds a score map, clamping values into `[0, 1]`.
    pub fn new(height: usize, width: usize, scores: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || scores.len() != height * width {
            return Err(Error::dims(format!(
                "{} scores for a {height}x{width} map",
                scores.len()
            )));
        }
        if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFinite {
                row: i / width,
                col: i % width,
                class: 0,
            });
        }
        let scores = scores.into_iter().map(|s| s.clamp(0.0, 1.0)).collect();
        Ok(Self {
            height,
            width,
            scores,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn scores(&self) -> &[f32] {
        &self.scores
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.scores[row * self.width + col] as f64
    }

    pub fn set(&mut self, row: usize, col: usize, value: f32) {
        self.scores[row * self.width + col] = value.clamp(0.0, 1.0);
    }

    pub fn to_rast(&self) -> Rast {
        Rast {
            height: self.height,
            width: self.width,
            channels: 1,
            data: self.scores.clone(),
        }
    }
}

pub fn save_score_map(map: &ScoreMap, path: &Path) -> Result<()> {
    map.to_rast().write(path)
}

pub fn load_score_map(path: &Path) -> Result<ScoreMap> {
    let r = Rast::read(path)?;
    if r.channels != 1 {
        return Err(Error::Format(format!(
            "score map must have one channel, found {}",
            r.channels
        )));
    }
    ScoreMap::new(r.height, r.width, r.data)
}

/// One labelled image: network probabilities plus its ground-truth mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub probs: ProbabilityMap,
    pub mask: LabelMask,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SampleSet {
    entries: Vec<Sample>,
}

impl SampleSet {
    pub fn new(entries: Vec<Sample>) -> Result<Self> {
        let mut seen = HashSet::new();
        for s in &entries {
            if !seen.insert(s.id.as_str()) {
                return Err(Error::invalid(format!("duplicate sample id {:?}", s.id)));
            }
            if s.probs.dims() != s.mask.dims() {
                return Err(Error::dims(format!(
                    "sample {:?}: probabilities {:?} vs mask {:?}",
                    s.id,
                    s.probs.dims(),
                    s.mask.dims()
                )));
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[Sample] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Sample> {
        self.entries.iter()
    }

    pub fn into_entries(self) -> Vec<Sample> {
        self.entries
    }

    /// Writes `<dir>/<id>.rast` and `<dir>/<id>.pgm` for every sample.
    pub fn save_dir(&self, dir: &Path, ood_label: u8, ignore_label: u8) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for s in &self.entries {
            let cfg = LabelConfig {
                num_classes: s.probs.num_classes(),
                ood_label,
                ignore_label,
            };
            s.probs.save(&dir.join(format!("{}.rast", s.id)))?;
            s.mask.save(&dir.join(format!("{}.pgm", s.id)), &cfg)?;
        }
        Ok(())
    }

    /// Loads every `<id>.rast` in `dir` together with its `<id>.pgm`, sorted by id.
    pub fn load_dir(dir: &Path, ood_label: u8, ignore_label: u8) -> Result<Self> {
        let mut entries = Vec::new();
        for id in list_ids(dir, "rast")? {
            let probs = load_probability_map(&dir.join(format!("{id}.rast")))?;
            let cfg = LabelConfig {
                num_classes: probs.num_classes(),
                ood_label,
                ignore_label,
            };
            let mask = load_mask(&dir.join(format!("{id}.pgm")), &cfg, Some(probs.dims()))?;
            entries.push(Sample { id, probs, mask });
        }
        Self::new(entries)
    }
}

/// File stems in `dir` with the given extension, sorted.
pub fn list_ids(dir: &Path, ext: &str) -> Result<Vec<String>> {
    let mut ids = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) == Some(ext) {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                ids.push(stem.to_string());
            }
        }
    }
    ids.sort();
    Ok(ids)
}
