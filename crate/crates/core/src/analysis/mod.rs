//! Evaluation and interpretation tooling for meta classifiers.

mod curves;
mod incremental;
mod lars;
mod loo;
mod pixels;
mod proxy;
pub mod report;

pub use curves::{
    auprc, auroc, evaluate_scores, fpr_at_95_tpr, pr_curve, roc_curve, EvalReport, TPR_TARGET,
};
pub use incremental::{incremental_evaluation, IncrementalResult};
pub use lars::{lars_order, lars_order_matrix, LarsOrdering};
pub use loo::{evaluate_components, leave_one_out, leave_one_out_dataset, LooResult};
pub use pixels::evaluate_pixels;
pub use proxy::{ood_fraction, split_by_ood_fraction, ProxySplit};
pub use report::{report_rows, rows_to_csv, step_points, write_rows_csv, Plot, Series};
