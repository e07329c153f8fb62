//! Versioned JSON model checkpoints.
//!
//! Parameters are `f64` and serde_json prints the shortest round-tripping
//! decimal form, so save → load reproduces every parameter bit-exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::layer::{Activation, DenseLayer};
use crate::nn::model::FeedforwardClassifier;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointFile {
    format_version: u32,
    num_classes: usize,
    layers: Vec<LayerRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
struct LayerRecord {
    in_dim: usize,
    out_dim: usize,
    activation: Activation,
    weights: Vec<f64>,
    biases: Vec<f64>,
}

pub fn model_to_json(model: &FeedforwardClassifier) -> String {
    let file = CheckpointFile {
        format_version: CHECKPOINT_FORMAT_VERSION,
        num_classes: model.num_classes(),
        layers: model
            .layers()
            .iter()
            .map(|l| LayerRecord {
                in_dim: l.in_dim(),
                out_dim: l.out_dim(),
                activation: l.activation(),
                weights: l.weights().data().to_vec(),
                biases: l.biases().to_vec(),
            })
            .collect(),
    };
    let mut s = serde_json::to_string_pretty(&file).expect("checkpoint serialization");
    s.push('\n');
    s
}

pub fn model_from_json(json: &str) -> Result<FeedforwardClassifier> {
    let file: CheckpointFile = serde_json::from_str(json)
        .map_err(|e| Error::Config(format!("cannot parse checkpoint: {e}")))?;
    if file.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(Error::Config(format!(
            "unsupported checkpoint format version {} (expected {CHECKPOINT_FORMAT_VERSION})",
            file.format_version
        )));
    }
    let mut layers = Vec::with_capacity(file.layers.len());
    for rec in file.layers {
        layers.push(DenseLayer::new(
            Matrix::from_vec(rec.out_dim, rec.in_dim, rec.weights)?,
            rec.biases,
            rec.activation,
        )?);
    }
    let model = FeedforwardClassifier::new(layers)?;
    if model.num_classes() != file.num_classes {
        return Err(Error::Config(format!(
            "checkpoint declares {} classes but layers produce {}",
            file.num_classes,
            model.num_classes()
        )));
    }
    Ok(model)
}

pub fn save_model(model: &FeedforwardClassifier, path: &Path) -> Result<()> {
    fs::write(path, model_to_json(model)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<FeedforwardClassifier> {
    let json = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    model_from_json(&json)
}
