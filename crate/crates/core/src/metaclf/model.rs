use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;

use crate::error::{Error, Result};
use crate::scoring::PROB_EPS;

/// Hidden widths of the reference MLP: three fully connected layers of 75 units.
pub const DEFAULT_HIDDEN: [usize; 3] = [75, 75, 75];

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Summed binary cross-entropy `-Σ y ln p + (1-y) ln(1-p)` with `p` clamped to `[ε, 1-ε]`.
pub fn bce_loss(predictions: &[f64], labels: &[bool]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::dims(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(predictions
        .iter()
        .zip(labels)
        .map(|(&p, &y)| bce_term(p, if y { 1.0 } else { 0.0 }))
        .sum())
}

/// Batch-mean form of [`bce_loss`], the quantity the trainer minimizes.
pub fn mean_bce_loss(predictions: &[f64], labels: &[bool]) -> Result<f64> {
    Ok(bce_loss(predictions, labels)? / predictions.len() as f64)
}

#[inline]
fn bce_term(p: f64, y: f64) -> f64 {
    let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// Logistic regression: `sigmoid(w·x + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel {
    pub weights: Array1<f64>,
    pub bias: f64,
}

impl LogisticModel {
    pub fn zeros(num_features: usize) -> Self {
        Self {
            weights: Array1::zeros(num_features),
            bias: 0.0,
        }
    }
}

/// One fully connected layer; `weights` is `fan_in × fan_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn fan_in(&self) -> usize {
        self.weights.nrows()
    }

    pub fn fan_out(&self) -> usize {
        self.weights.ncols()
    }

    pub fn param_count(&self) -> usize {
        self.fan_in() * self.fan_out() + self.fan_out()
    }
}

/// Fully connected network with rectifier hidden units and a single sigmoid output.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    layers: Vec<Dense>,
}

impl MlpModel {
    /// All-zero network with the given layer widths, input first, output (1) last.
    pub fn zeros(dims: &[usize]) -> Result<Self> {
        if dims.len() < 2 || *dims.last().unwrap() != 1 || dims.contains(&0) {
            return Err(Error::invalid(format!(
                "MLP dims {dims:?} must have at least two positive entries ending in 1"
            )));
        }
        Ok(Self {
            layers: dims
                .windows(2)
                .map(|w| Dense {
                    weights: Array2::zeros((w[0], w[1])),
                    bias: Array1::zeros(w[1]),
                })
                .collect(),
        })
    }

    /// Weights uniform in `±sqrt(6 / (fan_in + fan_out))`, biases zero.
    ///
    /// Draws are rounded to `f32` so that a freshly initialized model is exactly
    /// representable in the model file.
    pub fn glorot(dims: &[usize], rng: &mut impl Rng) -> Result<Self> {
        let mut m = Self::zeros(dims)?;
        for layer in &mut m.layers {
            let limit = (6.0 / (layer.fan_in() + layer.fan_out()) as f64).sqrt();
            layer
                .weights
                .mapv_inplace(|_| rng.random_range(-limit..limit) as f32 as f64);
        }
        Ok(m)
    }

    /// The reference architecture: `input → 75 → 75 → 75 → 1`.
    pub fn default_arch(input_dim: usize, rng: &mut impl Rng) -> Self {
        Self::glorot(&Self::default_dims(input_dim), rng).expect("valid dims")
    }

    pub fn default_dims(input_dim: usize) -> Vec<usize> {
        let mut d = vec![input_dim];
        d.extend(DEFAULT_HIDDEN);
        d.push(1);
        d
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.layers[0].fan_in()];
        d.extend(self.layers.iter().map(Dense::fan_out));
        d
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }
}

/// Either meta classifier family.
#[derive(Debug, Clone, PartialEq)]
pub enum Network {
    Logistic(LogisticModel),
    Mlp(MlpModel),
}

impl Network {
    pub fn kind(&self) -> ModelKind {
        match self {
            Network::Logistic(_) => ModelKind::Logistic,
            Network::Mlp(_) => ModelKind::Mlp,
        }
    }

    pub fn num_features(&self) -> usize {
        match self {
            Network::Logistic(m) => m.weights.len(),
            Network::Mlp(m) => m.layers[0].fan_in(),
        }
    }

    /// Layer widths including input and output.
    pub fn dims(&self) -> Vec<usize> {
        match self {
            Network::Logistic(m) => vec![m.weights.len(), 1],
            Network::Mlp(m) => m.dims(),
        }
    }

    pub fn layer_parameter_counts(&self) -> Vec<usize> {
        match self {
            Network::Logistic(m) => vec![m.weights.len() + 1],
            Network::Mlp(m) => m.layers.iter().map(Dense::param_count).collect(),
        }
    }

    pub fn count_parameters(&self) -> usize {
        self.layer_parameter_counts().iter().sum()
    }

    /// Output-layer pre-activations for a batch (one row per example).
    pub fn logits(&self, x: ArrayView2<f64>) -> Array1<f64> {
        match self {
            Network::Logistic(m) => x.dot(&m.weights) + m.bias,
            Network::Mlp(m) => {
                let (last, hidden) = m.layers.split_last().unwrap();
                let mut a = x.to_owned();
                for layer in hidden {
                    a = a.dot(&layer.weights) + &layer.bias;
                    a.mapv_inplace(|v| v.max(0.0));
                }
                (a.dot(&last.weights) + &last.bias).remove_axis(Axis(1))
            }
        }
    }

    pub fn predict_batch(&self, x: ArrayView2<f64>) -> Array1<f64> {
        self.logits(x).mapv(sigmoid)
    }

    /// Probability that a component is a false positive; `features` must be standardized.
    pub fn predict(&self, features: &[f64]) -> Result<f64> {
        if features.len() != self.num_features() {
            return Err(Error::dims(format!(
                "{} features for a model with {} inputs",
                features.len(),
                self.num_features()
            )));
        }
        let x = ArrayView1::from(features).insert_axis(Axis(0));
        Ok(self.predict_batch(x)[0])
    }

    /// Mean BCE over the batch and its exact gradient in [`Network::params`] layout.
    pub fn loss_and_gradient(&self, x: ArrayView2<f64>, y: ArrayView1<f64>) -> (f64, Vec<f64>) {
        let n = x.nrows() as f64;
        match self {
            Network::Logistic(m) => {
                let p = (x.dot(&m.weights) + m.bias).mapv(sigmoid);
                let loss = p.iter().zip(y).map(|(&p, &y)| bce_term(p, y)).sum::<f64>() / n;
                let delta = (&p - &y) / n;
                let mut grad = x.t().dot(&delta).to_vec();
                grad.push(delta.sum());
                (loss, grad)
            }
            Network::Mlp(m) => {
                let mut acts: Vec<Array2<f64>> = Vec::with_capacity(m.layers.len());
                let mut a = x.to_owned();
                let last = m.layers.len() - 1;
                for (i, layer) in m.layers.iter().enumerate() {
                    let mut z = a.dot(&layer.weights) + &layer.bias;
                    if i < last {
                        z.mapv_inplace(|v| v.max(0.0));
                    }
                    acts.push(std::mem::replace(&mut a, z));
                }
                // `a` holds the output logits (n × 1), `acts[i]` the input to layer i
                let p = a.column(0).mapv(sigmoid);
                let loss = p.iter().zip(y).map(|(&p, &y)| bce_term(p, y)).sum::<f64>() / n;
                let mut delta = ((&p - &y) / n).insert_axis(Axis(1));
                let mut grads: Vec<(Array2<f64>, Array1<f64>)> = Vec::with_capacity(m.layers.len());
                for i in (0..m.layers.len()).rev() {
                    let input = &acts[i];
                    grads.push((input.t().dot(&delta), delta.sum_axis(Axis(0))));
                    if i > 0 {
                        let mut back = delta.dot(&m.layers[i].weights.t());
                        // relu'(z) is 1 exactly where the stored activation is positive
                        back.zip_mut_with(input, |d, &act| {
                            if act <= 0.0 {
                                *d = 0.0;
                            }
                        });
                        delta = back;
                    }
                }
                let mut flat = Vec::with_capacity(self.count_parameters());
                for (gw, gb) in grads.iter().rev() {
                    flat.extend(gw.iter());
                    flat.extend(gb.iter());
                }
                (loss, flat)
            }
        }
    }

    /// All parameters, layer by layer: weights row-major (`fan_in × fan_out`) then biases.
    pub fn params(&self) -> Vec<f64> {
        match self {
            Network::Logistic(m) => {
                let mut v = m.weights.to_vec();
                v.push(m.bias);
                v
            }
            Network::Mlp(m) => {
                let mut v = Vec::with_capacity(self.count_parameters());
                for l in &m.layers {
                    v.extend(l.weights.iter());
                    v.extend(l.bias.iter());
                }
                v
            }
        }
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.count_parameters() {
            return Err(Error::dims(format!(
                "{} parameters for a model with {}",
                params.len(),
                self.count_parameters()
            )));
        }
        match self {
            Network::Logistic(m) => {
                let d = m.weights.len();
                m.weights.assign(&ArrayView1::from(&params[..d]));
                m.bias = params[d];
            }
            Network::Mlp(m) => {
                let mut off = 0;
                for l in &mut m.layers {
                    for w in l.weights.iter_mut() {
                        *w = params[off];
                        off += 1;
                    }
                    for b in l.bias.iter_mut() {
                        *b = params[off];
                        off += 1;
                    }
                }
            }
        }
        Ok(())
    }

    /// `true` for weights, `false` for biases, in [`Network::params`] layout.
    pub fn weight_mask(&self) -> Vec<bool> {
        match self {
            Network::Logistic(m) => {
                let mut v = vec![true; m.weights.len()];
                v.push(false);
                v
            }
            Network::Mlp(m) => {
                let mut v = Vec::with_capacity(self.count_parameters());
                for l in &m.layers {
                    v.extend(std::iter::repeat_n(true, l.weights.len()));
                    v.extend(std::iter::repeat_n(false, l.bias.len()));
                }
                v
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Logistic,
    Mlp,
}

impl ModelKind {
    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::Logistic => "logistic",
            ModelKind::Mlp => "mlp",
        }
    }

    /// Freshly initialized network: logistic starts at zero, the MLP uses the reference widths.
    pub fn init(&self, num_features: usize, rng: &mut impl Rng) -> Network {
        match self {
            ModelKind::Logistic => Network::Logistic(LogisticModel::zeros(num_features)),
            ModelKind::Mlp => Network::Mlp(MlpModel::default_arch(num_features, rng)),
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logistic" => Ok(ModelKind::Logistic),
            "mlp" => Ok(ModelKind::Mlp),
            other => Err(Error::invalid(format!("unknown model kind {other:?}"))),
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}
