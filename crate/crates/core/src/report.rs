//! Machine-readable experiment artifacts: scatter/confusion CSV, metrics
//! JSON and the run manifest. Reruns with identical config and seed produce
//! byte-identical files.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::losses::{argmax, entropy_score, softmax};
use crate::nn::FeedforwardClassifier;
use crate::ood::OodDetection;
use crate::pipeline::MetricsReport;

/// One evaluated sample for the scatter exports backing the entropy and
/// decision plots. `x0`/`x1` are the first two feature coordinates (the full
/// position for 2-D data); `true_label` is -1 for unlabeled samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterRow {
    pub x0: f64,
    pub x1: f64,
    pub true_label: i64,
    pub predicted_label: usize,
    pub entropy_score: f64,
    pub is_ood_predicted: bool,
}

/// Scores every sample of `dataset` with `model`: predicted class, normalized
/// softmax entropy over the model's full output, and the detector flag when a
/// detection result is supplied.
pub fn export_scatter(
    model: &FeedforwardClassifier,
    dataset: &LabeledDataset,
    detection: Option<&OodDetection>,
) -> Result<Vec<ScatterRow>> {
    let logits = model.logits(&dataset.samples)?;
    let mut rows = Vec::with_capacity(dataset.len());
    for r in 0..dataset.len() {
        let probs = softmax(logits.row(r))?;
        let sample = dataset.samples.row(r);
        rows.push(ScatterRow {
            x0: sample.first().copied().unwrap_or(0.0),
            x1: sample.get(1).copied().unwrap_or(0.0),
            true_label: dataset
                .labels
                .as_ref()
                .map_or(-1, |l| l[r] as i64),
            predicted_label: argmax(&probs),
            entropy_score: entropy_score(&probs),
            is_ood_predicted: detection.is_some_and(|d| d.is_ood(r)),
        });
    }
    Ok(rows)
}

pub fn write_scatter_csv(rows: &[ScatterRow], path: &Path) -> Result<()> {
    let mut out = String::from("x0,x1,true,pred,entropy,ood\n");
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            row.x0,
            row.x1,
            row.true_label,
            row.predicted_label,
            row.entropy_score,
            u8::from(row.is_ood_predicted)
        ));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Confusion CSV: one row per predicted class, one `true_<c>` column per true
/// class.
pub fn write_confusion_csv(report: &MetricsReport, path: &Path) -> Result<()> {
    let mut out = String::from("predicted");
    for c in 0..report.q + report.num_novel {
        out.push_str(&format!(",true_{c}"));
    }
    out.push('\n');
    for (pred, row) in report.confusion.iter().enumerate() {
        out.push_str(&pred.to_string());
        for v in row {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn write_metrics_json(report: &MetricsReport, path: &Path) -> Result<()> {
    let mut s = serde_json::to_string_pretty(report).expect("metrics serialization");
    s.push('\n');
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn read_metrics_json(path: &Path) -> Result<MetricsReport> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("cannot parse metrics: {e}")))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub seed: u64,
    pub code_version: String,
    pub config: ExperimentConfig,
}

pub fn write_manifest(config: &ExperimentConfig, path: &Path) -> Result<()> {
    let manifest = Manifest {
        name: config.name.clone(),
        seed: config.seed,
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        config: config.clone(),
    };
    let mut s = serde_json::to_string_pretty(&manifest).expect("manifest serialization");
    s.push('\n');
    fs::write(path, s).map_err(|e| Error::io(path, e))
}
