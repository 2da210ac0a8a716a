//! Hand-crafted metrics per predicted OoD component and the labelled metrics
//! dataset the meta classifiers are trained on.
//!
//! The standard registry has `24 + 8 + 2C + 5` columns (75 for C = 19):
//!
//! - dispersion (24): for normalized entropy, variation ratio `1 - max p` and
//!   probability margin `p(1) - p(2)`, the mean and population variance over
//!   the whole component, its interior and its boundary, plus the
//!   boundary/interior mean ratio and difference;
//! - geometry (8): sizes, boundary share, `sqrt(S)`, normalized centroid and
//!   bounding-box fill;
//! - class probabilities (2C): mean and variance of every `p(c)`;
//! - neighbourhood (5): statistics of the one-pixel ring around the component.
//!
//! When a component has no interior pixels its interior statistics equal the
//! whole-component statistics.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::raster::{write_atomic, ProbabilityMap, Sample, SampleSet, ScoreMap};
use crate::scoring::anomaly_score_map;
use crate::segments::{
    extract_components, label_components, ComponentRecord, Pixel, ThresholdConfig,
};

const DISPERSION: [&str; 3] = ["entropy", "var_ratio", "margin"];
const DISPERSION_STATS: [&str; 8] = [
    "mean",
    "mean_in",
    "mean_bd",
    "var",
    "var_in",
    "var_bd",
    "ratio_bd_in",
    "diff_bd_in",
];
const GEOMETRY: [&str; 8] = [
    "size",
    "size_in",
    "size_bd",
    "size_bd_rel",
    "size_sqrt",
    "center_row",
    "center_col",
    "bbox_fill",
];
const NEIGHBOURHOOD: [&str; 5] = [
    "nbr_entropy_mean",
    "nbr_max_prob_mean",
    "nbr_ood_fraction",
    "nbr_size_rel",
    "nbr_margin_mean",
];

/// Ordered metric names for a given number of classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetricRegistry {
    names: Vec<String>,
    num_classes: usize,
}

impl MetricRegistry {
    pub fn standard(num_classes: usize) -> Self {
        let mut names = Vec::with_capacity(37 + 2 * num_classes);
        for d in DISPERSION {
            for s in DISPERSION_STATS {
                names.push(format!("{d}_{s}"));
            }
        }
        names.extend(GEOMETRY.iter().map(|s| s.to_string()));
        for c in 0..num_classes {
            names.push(format!("prob_mean_{c}"));
            names.push(format!("prob_var_{c}"));
        }
        names.extend(NEIGHBOURHOOD.iter().map(|s| s.to_string()));
        Self { names, num_classes }
    }

    /// Looks up a registry profile by name. Only `standard` exists.
    pub fn profile(name: &str, num_classes: usize) -> Result<Self> {
        match name {
            "standard" => Ok(Self::standard(num_classes)),
            other => Err(Error::invalid(format!(
                "unknown registry profile {other:?}"
            ))),
        }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn total(&self) -> usize {
        self.names.len()
    }
}

/// Exact two-pass mean and population variance.
fn mean_var(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var)
}

fn top_two(probs: &[f64]) -> (f64, f64) {
    let (mut first, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &p in probs {
        if p > first {
            second = first;
            first = p;
        } else if p > second {
            second = p;
        }
    }
    (first, second)
}

/// Computes the registry's metric vector for one component.
///
/// `cfg` is the threshold used for the ring's `nbr_ood_fraction`.
pub fn extract_metrics(
    comp: &ComponentRecord,
    pmap: &ProbabilityMap,
    score: &ScoreMap,
    registry: &MetricRegistry,
    cfg: ThresholdConfig,
) -> Result<Vec<f64>> {
    let (h, w) = pmap.dims();
    if score.dims() != (h, w) || comp.image_dims != (h, w) {
        return Err(Error::dims(format!(
            "component {:?}, probabilities {:?}, scores {:?}",
            comp.image_dims,
            pmap.dims(),
            score.dims()
        )));
    }
    if registry.num_classes() != pmap.num_classes() {
        return Err(Error::dims(format!(
            "registry built for {} classes, map has {}",
            registry.num_classes(),
            pmap.num_classes()
        )));
    }
    let nc = pmap.num_classes();
    let mut buf = vec![0.0; nc];
    let mut out = Vec::with_capacity(registry.total());

    // per-pixel dispersion values, indexed [measure][pixel]
    let dispersion = |pixels: &[Pixel], buf: &mut [f64]| -> [Vec<f64>; 3] {
        let mut d: [Vec<f64>; 3] = Default::default();
        for &(r, c) in pixels {
            pmap.pixel_into(r * w + c, buf);
            let (p1, p2) = top_two(buf);
            d[0].push(score.get(r, c));
            d[1].push(1.0 - p1);
            d[2].push(p1 - p2);
        }
        d
    };
    let all = dispersion(&comp.pixels, &mut buf);
    let bd = dispersion(&comp.boundary, &mut buf);
    let inner = if comp.interior.is_empty() {
        all.clone()
    } else {
        dispersion(&comp.interior, &mut buf)
    };
    for k in 0..3 {
        let (m, v) = mean_var(&all[k]);
        let (m_in, v_in) = mean_var(&inner[k]);
        let (m_bd, v_bd) = mean_var(&bd[k]);
        out.extend([
            m,
            m_in,
            m_bd,
            v,
            v_in,
            v_bd,
            m_bd / (m_in + 1e-9),
            m_bd - m_in,
        ]);
    }

    let s = comp.size() as f64;
    let (row_sum, col_sum) = comp
        .pixels
        .iter()
        .fold((0.0, 0.0), |(a, b), &(r, c)| (a + r as f64, b + c as f64));
    out.extend([
        s,
        comp.interior.len() as f64,
        comp.boundary.len() as f64,
        comp.boundary.len() as f64 / s,
        s.sqrt(),
        row_sum / s / h as f64,
        col_sum / s / w as f64,
        s / (comp.bbox.height() * comp.bbox.width()) as f64,
    ]);

    let mut per_class: Vec<Vec<f64>> = vec![Vec::with_capacity(comp.size()); nc];
    for &(r, c) in &comp.pixels {
        pmap.pixel_into(r * w + c, &mut buf);
        for (k, &p) in buf.iter().enumerate() {
            per_class[k].push(p);
        }
    }
    for values in &per_class {
        let (m, v) = mean_var(values);
        out.extend([m, v]);
    }

    let ring = ring_pixels(comp);
    if ring.is_empty() {
        out.extend([0.0; 5]);
    } else {
        let t = cfg.t() as f32;
        let (mut ent, mut maxp, mut margin) = (0.0, 0.0, 0.0);
        let mut above = 0usize;
        for &(r, c) in &ring {
            pmap.pixel_into(r * w + c, &mut buf);
            let (p1, p2) = top_two(&buf);
            let a = score.get(r, c);
            ent += a;
            maxp += p1;
            margin += p1 - p2;
            if a as f32 >= t {
                above += 1;
            }
        }
        let n = ring.len() as f64;
        out.extend([
            ent / n,
            maxp / n,
            above as f64 / n,
            n / comp.boundary.len() as f64,
            margin / n,
        ]);
    }
    debug_assert_eq!(out.len(), registry.total());
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "non-finite metric for component {}",
            comp.id
        )));
    }
    Ok(out)
}

/// Pixels outside the component within its 8-neighbourhood dilation, clipped to the image.
fn ring_pixels(comp: &ComponentRecord) -> Vec<Pixel> {
    let (h, w) = comp.image_dims;
    let r0 = comp.bbox.row_min.saturating_sub(1);
    let c0 = comp.bbox.col_min.saturating_sub(1);
    let r1 = (comp.bbox.row_max + 1).min(h - 1);
    let c1 = (comp.bbox.col_max + 1).min(w - 1);
    let (bh, bw) = (r1 - r0 + 1, c1 - c0 + 1);
    // 0 = untouched, 1 = component, 2 = ring
    let mut grid = vec![0u8; bh * bw];
    for &(r, c) in &comp.pixels {
        grid[(r - r0) * bw + (c - c0)] = 1;
    }
    for &(r, c) in &comp.pixels {
        for rr in r.saturating_sub(1)..=(r + 1).min(h - 1) {
            for cc in c.saturating_sub(1)..=(c + 1).min(w - 1) {
                let cell = &mut grid[(rr - r0) * bw + (cc - c0)];
                if *cell == 0 {
                    *cell = 2;
                }
            }
        }
    }
    (0..bh * bw)
        .filter(|&i| grid[i] == 2)
        .map(|i| (r0 + i / bw, c0 + i % bw))
        .collect()
}

/// Labelled metric rows with one group (sample) id per row.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsDataset {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    /// `true` marks a false-positive component.
    pub labels: Vec<bool>,
    pub group_ids: Vec<String>,
}

impl MetricsDataset {
    pub fn new(
        columns: Vec<String>,
        rows: Vec<Vec<f64>>,
        labels: Vec<bool>,
        group_ids: Vec<String>,
    ) -> Result<Self> {
        if rows.len() != labels.len() || rows.len() != group_ids.len() {
            return Err(Error::dims(format!(
                "{} rows, {} labels, {} group ids",
                rows.len(),
                labels.len(),
                group_ids.len()
            )));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != columns.len() {
                return Err(Error::dims(format!(
                    "row {i} has {} values for {} columns",
                    row.len(),
                    columns.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "row {i} has a non-finite value"
                )));
            }
        }
        Ok(Self {
            columns,
            rows,
            labels,
            group_ids,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn num_features(&self) -> usize {
        self.columns.len()
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }

    /// Distinct group ids in order of first appearance.
    pub fn groups(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for g in &self.group_ids {
            if out.last() != Some(g) && !out.contains(g) {
                out.push(g.clone());
            }
        }
        out
    }

    /// Keeps the rows for which `keep(index)` is true.
    pub fn filter_rows(&self, keep: impl Fn(usize) -> bool) -> Self {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| keep(i)).collect();
        Self {
            columns: self.columns.clone(),
            rows: idx.iter().map(|&i| self.rows[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            group_ids: idx.iter().map(|&i| self.group_ids[i].clone()).collect(),
        }
    }

    /// Keeps the given columns, in the given order.
    pub fn select_columns(&self, cols: &[usize]) -> Result<Self> {
        if let Some(&c) = cols.iter().find(|&&c| c >= self.num_features()) {
            return Err(Error::invalid(format!("column {c} out of range")));
        }
        Ok(Self {
            columns: cols.iter().map(|&c| self.columns[c].clone()).collect(),
            rows: self
                .rows
                .iter()
                .map(|r| cols.iter().map(|&c| r[c]).collect())
                .collect(),
            labels: self.labels.clone(),
            group_ids: self.group_ids.clone(),
        })
    }

    /// CSV with the metric columns followed by `label` and `group_id`; floats carry 9 significant digits.
    pub fn to_csv(&self) -> Result<String> {
        let mut out = String::new();
        for c in &self.columns {
            out.push_str(c);
            out.push(',');
        }
        out.push_str("label,group_id\n");
        for ((row, &label), group) in self.rows.iter().zip(&self.labels).zip(&self.group_ids) {
            if group.contains([',', '\n', '\r', '"']) {
                return Err(Error::invalid(format!(
                    "group id {group:?} cannot be written to CSV"
                )));
            }
            for v in row {
                write!(out, "{v:.8e},").unwrap();
            }
            writeln!(out, "{},{group}", label as u8).unwrap();
        }
        Ok(out)
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header: Vec<&str> = lines
            .next()
            .ok_or_else(|| Error::Format("empty metrics CSV".into()))?
            .split(',')
            .collect();
        let n = header.len();
        if n < 2 || header[n - 2] != "label" || header[n - 1] != "group_id" {
            return Err(Error::Format(
                "metrics CSV must end with label,group_id".into(),
            ));
        }
        let columns: Vec<String> = header[..n - 2].iter().map(|s| s.to_string()).collect();
        let (mut rows, mut labels, mut groups) = (Vec::new(), Vec::new(), Vec::new());
        for (lineno, line) in lines.enumerate().filter(|(_, l)| !l.is_empty()) {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != n {
                return Err(Error::Format(format!(
                    "line {}: {} fields, expected {n}",
                    lineno + 2,
                    fields.len()
                )));
            }
            let row = fields[..n - 2]
                .iter()
                .map(|f| {
                    f.parse::<f64>().map_err(|_| {
                        Error::Format(format!("line {}: bad number {f:?}", lineno + 2))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let label = match fields[n - 2] {
                "0" => false,
                "1" => true,
                other => {
                    return Err(Error::Format(format!(
                        "line {}: bad label {other:?}",
                        lineno + 2
                    )))
                }
            };
            rows.push(row);
            labels.push(label);
            groups.push(fields[n - 1].to_string());
        }
        Self::new(columns, rows, labels, groups)
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_csv()?.as_bytes())
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text)
    }
}

/// Score map, labelled components and metric rows for one sample.
#[derive(Debug, Clone)]
pub struct SampleMetrics {
    pub score: ScoreMap,
    pub components: Vec<ComponentRecord>,
    pub rows: Vec<Vec<f64>>,
}

pub fn sample_metrics(
    sample: &Sample,
    cfg: ThresholdConfig,
    registry: &MetricRegistry,
    min_size: usize,
) -> Result<SampleMetrics> {
    let score = anomaly_score_map(&sample.probs);
    let comps = extract_components(&score, cfg, min_size, &sample.id);
    let components = label_components(&comps, &sample.mask)?;
    let rows = components
        .iter()
        .map(|c| extract_metrics(c, &sample.probs, &score, registry, cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok(SampleMetrics {
        score,
        components,
        rows,
    })
}

/// One row per component of every sample, in sample order then component id.
pub fn build_metrics_dataset(
    samples: &SampleSet,
    cfg: ThresholdConfig,
    registry: &MetricRegistry,
) -> Result<MetricsDataset> {
    build_metrics_dataset_with_min_size(samples, cfg, registry, 1)
}

pub fn build_metrics_dataset_with_min_size(
    samples: &SampleSet,
    cfg: ThresholdConfig,
    registry: &MetricRegistry,
    min_size: usize,
) -> Result<MetricsDataset> {
    let per_sample = samples
        .entries()
        .par_iter()
        .map(|s| sample_metrics(s, cfg, registry, min_size))
        .collect::<Result<Vec<_>>>()?;
    let (mut rows, mut labels, mut groups) = (Vec::new(), Vec::new(), Vec::new());
    for (sample, m) in samples.iter().zip(per_sample) {
        for (comp, row) in m.components.iter().zip(m.rows) {
            rows.push(row);
            labels.push(comp.is_false_positive.unwrap_or(true));
            groups.push(sample.id.clone());
        }
    }
    MetricsDataset::new(registry.names().to_vec(), rows, labels, groups)
}

/// Per-column z-score statistics. Zero-variance columns get mean 0 and scale 1 so they pass through unchanged.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardization {
    pub fn identity(n: usize) -> Self {
        Self {
            mean: vec![0.0; n],
            scale: vec![1.0; n],
        }
    }

    pub fn fit(rows: &[Vec<f64>], num_features: usize) -> Result<Self> {
        if rows.len() < 2 {
            return Err(Error::invalid(format!(
                "standardization needs at least 2 rows, got {}",
                rows.len()
            )));
        }
        let mut mean = Vec::with_capacity(num_features);
        let mut scale = Vec::with_capacity(num_features);
        let mut col = Vec::with_capacity(rows.len());
        for j in 0..num_features {
            col.clear();
            col.extend(rows.iter().map(|r| r[j]));
            let (m, v) = mean_var(&col);
            let sd = v.sqrt();
            if sd <= 1e-12 * m.abs().max(1.0) {
                mean.push(0.0);
                scale.push(1.0);
            } else {
                mean.push(m);
                scale.push(sd);
            }
        }
        Ok(Self { mean, scale })
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(x, (m, s))| (x - m) / s)
            .collect()
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }
}

pub fn standardize(dataset: &MetricsDataset) -> Result<(MetricsDataset, Standardization)> {
    let stats = Standardization::fit(&dataset.rows, dataset.num_features())?;
    let rows = dataset.rows.iter().map(|r| stats.apply(r)).collect();
    Ok((
        MetricsDataset {
            rows,
            ..dataset.clone()
        },
        stats,
    ))
}
