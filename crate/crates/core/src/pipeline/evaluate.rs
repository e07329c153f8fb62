//! Evaluation of an extended model: known/novel accuracy split, confusion
//! table, and cluster-to-class mapping metrics.

use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::losses::argmax;
use crate::nn::FeedforwardClassifier;
use crate::pipeline::assignment::{map_clusters, ClusterMapping};

/// Detector quality against ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionStats {
    /// Fraction of true-novel samples flagged OoD.
    pub recall: f64,
    /// Fraction of in-distribution samples flagged OoD.
    pub false_positive_rate: f64,
    pub detected: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub q: usize,
    pub k: usize,
    pub num_novel: usize,
    /// Accuracy over known-class samples, argmax over all q+k outputs.
    pub acc_known: f64,
    /// Accuracy over novel-class samples: a hit is an argmax on the empty
    /// class that the optimal mapping assigns to the sample's true class.
    pub acc_novel: f64,
    /// Fraction of novel samples predicted into any empty class.
    pub novel_assignment_rate: f64,
    /// Among novel samples predicted into empty classes, the fraction whose
    /// empty class maps to their true class.
    pub cluster_purity: f64,
    pub mapping: ClusterMapping,
    pub unused_empty_classes: Vec<usize>,
    /// Rows: predicted class (q+k); columns: true class (q + num_novel).
    pub confusion: Vec<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detection: Option<DetectionStats>,
}

/// Evaluates the extended model on labeled data whose labels live in the
/// canonical space: known classes `0..q`, novel classes `q..q+m`.
pub fn evaluate(
    model: &FeedforwardClassifier,
    eval: &LabeledDataset,
    q: usize,
    k: usize,
) -> Result<MetricsReport> {
    let labels = eval.labels()?;
    if eval.is_empty() {
        return Err(Error::Argument("cannot evaluate on an empty dataset".into()));
    }
    if model.num_classes() != q + k {
        return Err(Error::Usage(format!(
            "model has {} outputs but q + k = {}",
            model.num_classes(),
            q + k
        )));
    }
    let max_label = labels.iter().copied().max().unwrap_or(0);
    let num_novel = (max_label + 1).saturating_sub(q);

    let logits = model.logits(&eval.samples)?;
    let predictions: Vec<usize> = (0..logits.rows()).map(|r| argmax(logits.row(r))).collect();

    let mut confusion = vec![vec![0u64; q + num_novel]; q + k];
    for (&pred, &truth) in predictions.iter().zip(labels) {
        if truth >= q + num_novel {
            return Err(Error::Argument(format!(
                "label {truth} outside the canonical range 0..{}",
                q + num_novel
            )));
        }
        confusion[pred][truth] += 1;
    }

    // Restrict to empty-class predictions on novel samples for the mapping.
    let novel_counts: Vec<Vec<u64>> = (q..q + k)
        .map(|row| confusion[row][q..].to_vec())
        .collect();
    let mapping = if num_novel > 0 {
        map_clusters(&novel_counts)?
    } else {
        ClusterMapping {
            assignment: vec![None; k],
            complete: true,
        }
    };

    let mut known_total = 0u64;
    let mut known_hits = 0u64;
    let mut novel_total = 0u64;
    let mut novel_hits = 0u64;
    let mut novel_in_empty = 0u64;
    for (&pred, &truth) in predictions.iter().zip(labels) {
        if truth < q {
            known_total += 1;
            if pred == truth {
                known_hits += 1;
            }
        } else {
            novel_total += 1;
            if pred >= q {
                novel_in_empty += 1;
                if mapping.mapped_novel(pred - q) == Some(truth - q) {
                    novel_hits += 1;
                }
            }
        }
    }

    let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    Ok(MetricsReport {
        q,
        k,
        num_novel,
        acc_known: ratio(known_hits, known_total),
        acc_novel: ratio(novel_hits, novel_total),
        novel_assignment_rate: ratio(novel_in_empty, novel_total),
        cluster_purity: ratio(novel_hits, novel_in_empty),
        unused_empty_classes: mapping.unused_slots(),
        mapping,
        confusion,
        detection: None,
    })
}

/// Recall / false-positive rate of a detected index set against per-sample
/// novel-class truth.
pub fn detection_stats(flagged: &[usize], is_novel: &[bool]) -> DetectionStats {
    let mut flags = vec![false; is_novel.len()];
    for &i in flagged {
        if i < flags.len() {
            flags[i] = true;
        }
    }
    let novel_total = is_novel.iter().filter(|&&n| n).count();
    let in_total = is_novel.len() - novel_total;
    let tp = flags
        .iter()
        .zip(is_novel)
        .filter(|(&f, &n)| f && n)
        .count();
    let fp = flags
        .iter()
        .zip(is_novel)
        .filter(|(&f, &n)| f && !n)
        .count();
    DetectionStats {
        recall: if novel_total == 0 {
            0.0
        } else {
            tp as f64 / novel_total as f64
        },
        false_positive_rate: if in_total == 0 {
            0.0
        } else {
            fp as f64 / in_total as f64
        },
        detected: flagged.len(),
    }
}
