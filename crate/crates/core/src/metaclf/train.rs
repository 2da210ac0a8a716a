use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::model::{ModelKind, Network};
use crate::error::{Error, Result};
use crate::features::{MetricsDataset, Standardization};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            weight_decay: 5e-3,
            epochs: 50,
            batch_size: 128,
            seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate >= 0.0
            && self.learning_rate.is_finite()
            && self.weight_decay >= 0.0
            && self.weight_decay.is_finite()
            && self.batch_size > 0
            && (0.0..1.0).contains(&self.adam_beta1)
            && (0.0..1.0).contains(&self.adam_beta2)
            && self.adam_eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "invalid training configuration {self:?}"
            )))
        }
    }
}

/// Weight decay is applied after the Adam step, to weights only.
pub const WEIGHT_DECAY_MODE: &str = "decoupled";

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingTrace {
    pub weight_decay_mode: &'static str,
    /// Mean per-example BCE seen during each epoch.
    pub epoch_loss: Vec<f64>,
}

/// A trained meta classifier together with the statistics that standardize its inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaModel {
    pub network: Network,
    pub standardization: Standardization,
    pub columns: Vec<String>,
    pub config: TrainConfig,
}

impl MetaModel {
    pub fn kind(&self) -> ModelKind {
        self.network.kind()
    }

    pub fn count_parameters(&self) -> usize {
        self.network.count_parameters()
    }

    /// False-positive probability for an unstandardized metric row.
    pub fn predict(&self, raw: &[f64]) -> Result<f64> {
        if raw.len() != self.standardization.len() {
            return Err(Error::dims(format!(
                "{} features for a model with {} inputs",
                raw.len(),
                self.standardization.len()
            )));
        }
        self.network.predict(&self.standardization.apply(raw))
    }

    pub fn predict_rows(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
        if rows.is_empty() {
            return Ok(Vec::new());
        }
        let d = self.standardization.len();
        if let Some(r) = rows.iter().find(|r| r.len() != d) {
            return Err(Error::dims(format!(
                "{} features for a model with {d} inputs",
                r.len()
            )));
        }
        let x = standardized_matrix(rows, &self.standardization);
        Ok(self.network.predict_batch(x.view()).to_vec())
    }
}

fn standardized_matrix(rows: &[Vec<f64>], stats: &Standardization) -> Array2<f64> {
    let d = stats.len();
    Array2::from_shape_fn((rows.len(), d), |(i, j)| {
        (rows[i][j] - stats.mean[j]) / stats.scale[j]
    })
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    fn update(&mut self, params: &mut [f64], grad: &[f64], is_weight: &[bool], cfg: &TrainConfig) {
        self.step += 1;
        let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
        let c1 = 1.0 - b1.powi(self.step);
        let c2 = 1.0 - b2.powi(self.step);
        let decay = cfg.learning_rate * cfg.weight_decay;
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g;
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_eps);
            if is_weight[i] {
                params[i] -= decay * params[i];
            }
        }
    }
}

/// Mini-batch Adam on the batch-mean BCE.
///
/// Inputs are standardized with statistics fitted on `dataset` (identity for a
/// single row). Each epoch visits the rows in a seeded Fisher–Yates order and
/// keeps the final partial batch. Parameters are rounded to `f32` at the end so
/// the model file reproduces them exactly.
pub fn train(
    kind: ModelKind,
    dataset: &MetricsDataset,
    cfg: &TrainConfig,
) -> Result<(MetaModel, TrainingTrace)> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let positives = dataset.positives();
    if positives == 0 || positives == dataset.len() {
        log::warn!(
            "training {kind} meta classifier on {} rows of a single class",
            dataset.len()
        );
    }
    let d = dataset.num_features();
    let stats = if dataset.len() >= 2 {
        Standardization::fit(&dataset.rows, d)?
    } else {
        Standardization::identity(d)
    };
    let x = standardized_matrix(&dataset.rows, &stats);
    let y = Array1::from_iter(dataset.labels.iter().map(|&l| if l { 1.0 } else { 0.0 }));

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut network = kind.init(d, &mut rng);
    let mut params = network.params();
    let is_weight = network.weight_mask();
    let mut adam = Adam::new(params.len());
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut epoch_loss = Vec::with_capacity(cfg.epochs);

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let xb = x.select(Axis(0), batch);
            let yb = y.select(Axis(0), batch);
            let (loss, grad) = network.loss_and_gradient(xb.view(), yb.view());
            total += loss * batch.len() as f64;
            adam.update(&mut params, &grad, &is_weight, cfg);
            network.set_params(&params)?;
        }
        epoch_loss.push(total / dataset.len() as f64);
    }

    let rounded: Vec<f64> = params.iter().map(|&p| p as f32 as f64).collect();
    network.set_params(&rounded)?;
    Ok((
        MetaModel {
            network,
            standardization: stats,
            columns: dataset.columns.clone(),
            config: cfg.clone(),
        },
        TrainingTrace {
            weight_decay_mode: WEIGHT_DECAY_MODE,
            epoch_loss,
        },
    ))
}
