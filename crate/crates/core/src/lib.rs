//! Entropy-based anomaly segmentation post-processing.
//!
//! The pipeline turns per-pixel class probabilities into normalized-entropy
//! anomaly scores, thresholds them into predicted out-of-distribution (OoD)
//! components, describes each component with hand-crafted metrics, and trains
//! meta classifiers (logistic regression or a small MLP) that flag false
//! positive components so they can be removed from the anomaly output.
//!
//! Module map:
//!
//! - [`raster`]: probability maps, label masks, score maps and their file formats.
//! - [`scoring`]: entropy, anomaly scores and the entropy-maximization losses.
//! - [`segments`]: thresholding, connected components, TP/FP labelling.
//! - [`features`]: the metric registry and the metrics dataset.
//! - [`metaclf`]: meta classifier models, training and false-positive removal.
//! - [`analysis`]: ROC/PR metrics, leave-one-out, LARS ordering, incremental evaluation.
//! - [`synth`]: synthetic scenes with planted anomalies.
//! - [`cli`]: the `metaseg` command line front end.

pub mod analysis;
pub mod cli;
pub mod error;
pub mod features;
pub mod metaclf;
pub mod raster;
pub mod scoring;
pub mod segments;
pub mod synth;

pub use error::{Error, Result};
