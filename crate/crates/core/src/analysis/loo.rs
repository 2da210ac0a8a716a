use rayon::prelude::*;

use super::curves::{evaluate_scores, EvalReport};
use crate::error::{Error, Result};
use crate::features::{build_metrics_dataset, MetricRegistry, MetricsDataset};
use crate::metaclf::{train, MetaModel, ModelKind, TrainConfig};
use crate::raster::SampleSet;
use crate::segments::ThresholdConfig;

/// Scores a dataset with a trained model; the positive class is "false positive".
pub fn evaluate_components(model: &MetaModel, dataset: &MetricsDataset) -> Result<EvalReport> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let scores = model.predict_rows(&dataset.rows)?;
    evaluate_scores(&scores, &dataset.labels)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LooResult {
    /// Held-out false-positive probability for every dataset row, in row order.
    pub scores: Vec<f64>,
    pub labels: Vec<bool>,
    pub report: EvalReport,
}

/// Leave-one-group-out: each group's rows are scored by a model trained on all other groups.
///
/// Folds run in parallel and every fold uses the same seed, so the result does
/// not depend on scheduling.
pub fn leave_one_out_dataset(
    kind: ModelKind,
    dataset: &MetricsDataset,
    cfg: &TrainConfig,
) -> Result<LooResult> {
    let groups = dataset.groups();
    if groups.len() < 2 {
        return Err(Error::invalid(format!(
            "leave-one-out needs at least 2 samples, got {}",
            groups.len()
        )));
    }
    let folds = groups
        .par_iter()
        .map(|g| {
            let held: Vec<usize> = (0..dataset.len())
                .filter(|&i| &dataset.group_ids[i] == g)
                .collect();
            let training = dataset.filter_rows(|i| &dataset.group_ids[i] != g);
            if training.positives() == 0 || training.positives() == training.len() {
                log::warn!("fold {g:?}: training split has a single class");
            }
            let (model, _) = train(kind, &training, cfg)?;
            let rows: Vec<Vec<f64>> = held.iter().map(|&i| dataset.rows[i].clone()).collect();
            Ok((held, model.predict_rows(&rows)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut scores = vec![f64::NAN; dataset.len()];
    for (idx, s) in folds {
        for (i, v) in idx.into_iter().zip(s) {
            scores[i] = v;
        }
    }
    let report = evaluate_scores(&scores, &dataset.labels)?;
    Ok(LooResult {
        scores,
        labels: dataset.labels.clone(),
        report,
    })
}

/// Builds the metrics dataset from `samples` and runs [`leave_one_out_dataset`] over it.
pub fn leave_one_out(
    kind: ModelKind,
    samples: &SampleSet,
    cfg: &TrainConfig,
    threshold: ThresholdConfig,
    registry: &MetricRegistry,
) -> Result<LooResult> {
    if samples.len() < 2 {
        return Err(Error::invalid(format!(
            "leave-one-out needs at least 2 samples, got {}",
            samples.len()
        )));
    }
    let dataset = build_metrics_dataset(samples, threshold, registry)?;
    leave_one_out_dataset(kind, &dataset, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::Standardization;
    use crate::metaclf::{LogisticModel, Network};
    use ndarray::array;

    fn toy() -> MetricsDataset {
        let rows: Vec<Vec<f64>> = (0..24)
            .map(|i| vec![(i % 6) as f64, (i % 5) as f64])
            .collect();
        let labels = (0..24).map(|i| i % 6 >= 3).collect();
        let groups = (0..24).map(|i| format!("s{}", i / 6)).collect();
        MetricsDataset::new(vec!["a".into(), "b".into()], rows, labels, groups).unwrap()
    }

    fn fixed(weights: ndarray::Array1<f64>, bias: f64) -> MetaModel {
        let d = weights.len();
        MetaModel {
            network: Network::Logistic(LogisticModel { weights, bias }),
            standardization: Standardization::identity(d),
            columns: (0..d).map(|i| i.to_string()).collect(),
            config: TrainConfig::default(),
        }
    }

    #[test]
    fn constant_and_oracle_models() {
        let d = toy();
        assert_eq!(
            evaluate_components(&fixed(array![0.0, 0.0], 0.0), &d)
                .unwrap()
                .auroc,
            0.5
        );
        // first feature >= 3 is exactly the label
        let r = evaluate_components(&fixed(array![10.0, 0.0], -25.0), &d).unwrap();
        assert_eq!((r.auroc, r.auprc), (1.0, 1.0));
    }

    #[test]
    fn every_row_scored_once() {
        let d = toy();
        let cfg = TrainConfig {
            epochs: 5,
            ..Default::default()
        };
        let r = leave_one_out_dataset(ModelKind::Logistic, &d, &cfg).unwrap();
        assert_eq!(r.scores.len(), d.len());
        assert!(r.scores.iter().all(|s| s.is_finite()));
        assert_eq!(r.report.positives + r.report.negatives, d.len());
        let again = leave_one_out_dataset(ModelKind::Logistic, &d, &cfg).unwrap();
        assert_eq!(r, again);
    }

    #[test]
    fn needs_two_groups() {
        let d = toy().filter_rows(|i| i < 6);
        assert!(leave_one_out_dataset(ModelKind::Logistic, &d, &TrainConfig::default()).is_err());
    }
}
