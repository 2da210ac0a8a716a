//! Model files: a `key=value` text descriptor terminated by an `end` line,
//! followed by the parameters as a 1×N×1 RAST block of `f32`.

use std::collections::HashMap;
use std::path::Path;

use ndarray::Array1;

use super::model::{LogisticModel, MlpModel, ModelKind, Network};
use super::train::{MetaModel, TrainConfig, WEIGHT_DECAY_MODE};
use crate::error::{Error, Result};
use crate::features::Standardization;
use crate::raster::{write_atomic, Rast};

const MAGIC_LINE: &str = "metaseg-model 1";

fn join<T: ToString>(v: &[T]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

pub fn encode_model(model: &MetaModel) -> Vec<u8> {
    let net = &model.network;
    let cfg = &model.config;
    let hidden = match net.kind() {
        ModelKind::Logistic => "none",
        ModelKind::Mlp => "relu",
    };
    let header = [
        MAGIC_LINE.to_string(),
        format!("kind={}", net.kind()),
        format!("dims={}", join(&net.dims())),
        format!("hidden_activation={hidden}"),
        "output_activation=sigmoid".to_string(),
        format!("parameters={}", net.count_parameters()),
        format!("columns={}", model.columns.join(",")),
        format!("standardization_mean={}", join(&model.standardization.mean)),
        format!(
            "standardization_scale={}",
            join(&model.standardization.scale)
        ),
        format!("seed={}", cfg.seed),
        format!("learning_rate={}", cfg.learning_rate),
        format!("weight_decay={}", cfg.weight_decay),
        format!("weight_decay_mode={WEIGHT_DECAY_MODE}"),
        format!("epochs={}", cfg.epochs),
        format!("batch_size={}", cfg.batch_size),
        format!("adam_beta1={}", cfg.adam_beta1),
        format!("adam_beta2={}", cfg.adam_beta2),
        format!("adam_eps={}", cfg.adam_eps),
        "end\n".to_string(),
    ]
    .join("\n");
    let params = net.params();
    let block = Rast {
        height: 1,
        width: params.len(),
        channels: 1,
        data: params.iter().map(|&p| p as f32).collect(),
    };
    let mut out = header.into_bytes();
    out.extend(block.to_bytes());
    out
}

fn parse_list<T: std::str::FromStr>(key: &str, s: &str) -> Result<Vec<T>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|x| {
            x.parse()
                .map_err(|_| Error::Format(format!("bad value {x:?} for {key}")))
        })
        .collect()
}

pub fn decode_model(bytes: &[u8]) -> Result<MetaModel> {
    let marker = b"\nend\n";
    let split = bytes
        .windows(marker.len())
        .position(|w| w == marker)
        .ok_or_else(|| Error::Format("model descriptor has no end line".into()))?;
    let text = std::str::from_utf8(&bytes[..split])
        .map_err(|_| Error::Format("model descriptor is not UTF-8".into()))?;
    let mut lines = text.lines();
    if lines.next() != Some(MAGIC_LINE) {
        return Err(Error::Format("not a metaseg model file".into()));
    }
    let mut kv = HashMap::new();
    for line in lines {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("bad descriptor line {line:?}")))?;
        kv.insert(k, v);
    }
    let get = |k: &str| -> Result<&str> {
        kv.get(k)
            .copied()
            .ok_or_else(|| Error::Format(format!("model descriptor lacks {k}")))
    };
    let num = |k: &str| -> Result<f64> {
        get(k)?
            .parse()
            .map_err(|_| Error::Format(format!("bad value for {k}")))
    };
    let int = |k: &str| -> Result<u64> {
        get(k)?
            .parse()
            .map_err(|_| Error::Format(format!("bad value for {k}")))
    };

    let kind: ModelKind = get("kind")?.parse()?;
    let dims: Vec<usize> = parse_list("dims", get("dims")?)?;
    let mut network = match kind {
        ModelKind::Logistic => {
            if dims.len() != 2 || dims[1] != 1 {
                return Err(Error::Format(format!("logistic dims {dims:?}")));
            }
            Network::Logistic(LogisticModel {
                weights: Array1::zeros(dims[0]),
                bias: 0.0,
            })
        }
        ModelKind::Mlp => Network::Mlp(MlpModel::zeros(&dims)?),
    };
    let block = Rast::from_bytes(&bytes[split + marker.len()..])?;
    let params: Vec<f64> = block.data.iter().map(|&p| p as f64).collect();
    network.set_params(&params)?;

    let columns: Vec<String> = parse_list("columns", get("columns")?)?;
    let standardization = Standardization {
        mean: parse_list("standardization_mean", get("standardization_mean")?)?,
        scale: parse_list("standardization_scale", get("standardization_scale")?)?,
    };
    let d = network.num_features();
    if columns.len() != d || standardization.mean.len() != d || standardization.scale.len() != d {
        return Err(Error::Format(format!(
            "descriptor lists {} columns and {}/{} statistics for {d} inputs",
            columns.len(),
            standardization.mean.len(),
            standardization.scale.len()
        )));
    }
    let config = TrainConfig {
        learning_rate: num("learning_rate")?,
        weight_decay: num("weight_decay")?,
        epochs: int("epochs")? as usize,
        batch_size: int("batch_size")? as usize,
        seed: int("seed")?,
        adam_beta1: num("adam_beta1")?,
        adam_beta2: num("adam_beta2")?,
        adam_eps: num("adam_eps")?,
    };
    Ok(MetaModel {
        network,
        standardization,
        columns,
        config,
    })
}

pub fn save_model(model: &MetaModel, path: &Path) -> Result<()> {
    write_atomic(path, &encode_model(model))
}

pub fn load_model(path: &Path) -> Result<MetaModel> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes)
}
