//! Meta classifiers that decide whether a predicted OoD component is a false
//! positive: logistic regression and a small fully connected network, both
//! trained from scratch with mini-batch Adam on binary cross-entropy.

mod filter;
mod io;
mod model;
mod train;

pub use filter::remove_false_positives;
pub use io::{decode_model, encode_model, load_model, save_model};
pub use model::{
    bce_loss, mean_bce_loss, sigmoid, Dense, LogisticModel, MlpModel, ModelKind, Network,
    DEFAULT_HIDDEN,
};
pub use train::{train, MetaModel, TrainConfig, TrainingTrace, WEIGHT_DECAY_MODE};

/// Default probability above which a component is treated as a false positive.
pub const DEFAULT_DECISION_THRESHOLD: f64 = 0.5;
