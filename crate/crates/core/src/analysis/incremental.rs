use super::lars::{lars_order, LarsOrdering};
use super::loo::leave_one_out_dataset;
use crate::error::Result;
use crate::features::MetricsDataset;
use crate::metaclf::{ModelKind, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct IncrementalResult {
    pub ordering: LarsOrdering,
    /// `auroc[i - 1]` uses the first `i` metrics in LARS order.
    pub auroc: Vec<f64>,
    pub auprc: Vec<f64>,
}

/// Trains on growing prefixes of the LARS order and evaluates each with
/// leave-one-out, restarting from the seeded initialization every time.
///
/// A prefix keeps its columns in original dataset order, so the last entry is
/// the plain full-feature leave-one-out run.
pub fn incremental_evaluation(
    kind: ModelKind,
    dataset: &MetricsDataset,
    cfg: &TrainConfig,
) -> Result<IncrementalResult> {
    let ordering = lars_order(dataset)?;
    let mut auroc = Vec::with_capacity(dataset.num_features());
    let mut auprc = Vec::with_capacity(dataset.num_features());
    for i in 1..=dataset.num_features() {
        let mut cols = ordering.ordered_metric_indices[..i].to_vec();
        cols.sort_unstable();
        let subset = dataset.select_columns(&cols)?;
        let r = leave_one_out_dataset(kind, &subset, cfg)?.report;
        log::info!(
            "incremental {i}/{}: auroc {:.4} auprc {:.4}",
            dataset.num_features(),
            r.auroc,
            r.auprc
        );
        auroc.push(r.auroc);
        auprc.push(r.auprc);
    }
    Ok(IncrementalResult {
        ordering,
        auroc,
        auprc,
    })
}
