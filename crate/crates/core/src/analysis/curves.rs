//! Ranking metrics over scored binary populations. Tied scores always form a
//! single threshold group; thresholds are inclusive (`score ≥ τ`).

use crate::error::{Error, Result};

/// Target true-positive rate for [`fpr_at_95_tpr`].
pub const TPR_TARGET: f64 = 0.95;

/// Positive/negative counts per distinct score, highest score first.
struct Groups {
    groups: Vec<(f64, usize, usize)>,
    positives: usize,
    negatives: usize,
}

fn grouped(scores: &[f64], labels: &[bool]) -> Result<Groups> {
    if scores.len() != labels.len() {
        return Err(Error::dims(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::invalid(format!("non-finite score {s}")));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut groups: Vec<(f64, usize, usize)> = Vec::new();
    let (mut positives, mut negatives) = (0, 0);
    for i in order {
        let (s, y) = (scores[i], labels[i]);
        if y {
            positives += 1;
        } else {
            negatives += 1;
        }
        match groups.last_mut() {
            Some(g) if g.0 == s => {
                if y {
                    g.1 += 1
                } else {
                    g.2 += 1
                }
            }
            _ => groups.push((s, y as usize, !y as usize)),
        }
    }
    Ok(Groups {
        groups,
        positives,
        negatives,
    })
}

fn require_both(g: &Groups) -> Result<()> {
    if g.positives == 0 || g.negatives == 0 {
        return Err(Error::SingleClass(format!(
            "{} positives, {} negatives",
            g.positives, g.negatives
        )));
    }
    Ok(())
}

/// Probability that a random positive outranks a random negative, ties counting ½.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let g = grouped(scores, labels)?;
    require_both(&g)?;
    let mut pos_above = 0usize;
    let mut twice_pairs = 0u128;
    for &(_, p, n) in &g.groups {
        twice_pairs += (n as u128) * (2 * pos_above as u128 + p as u128);
        pos_above += p;
    }
    Ok(twice_pairs as f64 / (2.0 * g.positives as f64 * g.negatives as f64))
}

/// Average precision: `Σ ΔRecall · Precision` over descending score groups.
pub fn auprc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let g = grouped(scores, labels)?;
    if g.positives == 0 {
        return Err(Error::SingleClass("no positives".into()));
    }
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut ap = 0.0;
    for &(_, p, n) in &g.groups {
        tp += p;
        fp += n;
        if p > 0 {
            ap += p as f64 * (tp as f64 / (tp + fp) as f64);
        }
    }
    Ok(ap / g.positives as f64)
}

/// Lowest false-positive rate among observed-score thresholds reaching 95 % TPR.
pub fn fpr_at_95_tpr(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let g = grouped(scores, labels)?;
    require_both(&g)?;
    let (mut tp, mut fp) = (0usize, 0usize);
    for &(_, p, n) in &g.groups {
        tp += p;
        fp += n;
        if tp as f64 / g.positives as f64 >= TPR_TARGET {
            return Ok(fp as f64 / g.negatives as f64);
        }
    }
    unreachable!("the lowest threshold accepts every positive")
}

/// ROC points `(fpr, tpr)` from `(0, 0)` to `(1, 1)`.
pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<Vec<(f64, f64)>> {
    let g = grouped(scores, labels)?;
    require_both(&g)?;
    let mut pts = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    for &(_, p, n) in &g.groups {
        tp += p;
        fp += n;
        pts.push((
            fp as f64 / g.negatives as f64,
            tp as f64 / g.positives as f64,
        ));
    }
    Ok(pts)
}

/// Precision-recall step points `(recall, precision)`, one per threshold group.
pub fn pr_curve(scores: &[f64], labels: &[bool]) -> Result<Vec<(f64, f64)>> {
    let g = grouped(scores, labels)?;
    if g.positives == 0 {
        return Err(Error::SingleClass("no positives".into()));
    }
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut pts = Vec::with_capacity(g.groups.len() + 1);
    for &(_, p, n) in &g.groups {
        tp += p;
        fp += n;
        let point = (tp as f64 / g.positives as f64, tp as f64 / (tp + fp) as f64);
        if pts.is_empty() {
            pts.push((0.0, point.1));
        }
        pts.push(point);
    }
    Ok(pts)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub auroc: f64,
    pub auprc: f64,
    pub fpr95: Option<f64>,
    pub positives: usize,
    pub negatives: usize,
}

impl EvalReport {
    /// Fraction of positives, the AUPRC of an uninformed ranking.
    pub fn prevalence(&self) -> f64 {
        self.positives as f64 / (self.positives + self.negatives) as f64
    }
}

pub fn evaluate_scores(scores: &[f64], labels: &[bool]) -> Result<EvalReport> {
    let positives = labels.iter().filter(|&&l| l).count();
    Ok(EvalReport {
        auroc: auroc(scores, labels)?,
        auprc: auprc(scores, labels)?,
        fpr95: Some(fpr_at_95_tpr(scores, labels)?),
        positives,
        negatives: labels.len() - positives,
    })
}
