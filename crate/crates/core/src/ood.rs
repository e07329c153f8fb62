//! Entropy-threshold OoD detection and the two known-unknown generators used
//! during entropy-maximization training (uniform box noise and mixup).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::losses::{entropy_score, softmax};
use crate::matrix::Matrix;
use crate::nn::FeedforwardClassifier;
use crate::seeded::rng_from_seed;

/// Detection outcome: per-sample entropy scores and the indices flagged OoD.
/// A sample is OoD exactly when its score strictly exceeds `tau`, so boundary
/// samples count as in-distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OodDetection {
    pub tau: f64,
    pub scores: Vec<f64>,
    pub ood_indices: Vec<usize>,
}

impl OodDetection {
    pub fn from_scores(scores: Vec<f64>, tau: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&tau) {
            return Err(Error::Argument(format!("tau must lie in [0, 1], got {tau}")));
        }
        let ood_indices = scores
            .iter()
            .enumerate()
            .filter(|(_, &s)| s > tau)
            .map(|(i, _)| i)
            .collect();
        Ok(OodDetection {
            tau,
            scores,
            ood_indices,
        })
    }

    /// Replaces the flagged set (the oracle-detection ablation) while keeping
    /// the scores for reporting.
    pub fn with_indices(mut self, mut indices: Vec<usize>) -> Self {
        indices.sort_unstable();
        indices.dedup();
        self.ood_indices = indices;
        self
    }

    pub fn is_ood(&self, index: usize) -> bool {
        self.ood_indices.binary_search(&index).is_ok()
    }
}

/// Scores every sample with the normalized softmax entropy of the model's
/// prediction and thresholds at `tau`.
pub fn detect_ood(
    model: &FeedforwardClassifier,
    dataset: &LabeledDataset,
    tau: f64,
) -> Result<OodDetection> {
    if dataset.is_empty() {
        return Err(Error::Argument("cannot run detection on an empty dataset".into()));
    }
    let logits = model.logits(&dataset.samples)?;
    let mut scores = Vec::with_capacity(logits.rows());
    for r in 0..logits.rows() {
        scores.push(entropy_score(&softmax(logits.row(r))?));
    }
    OodDetection::from_scores(scores, tau)
}

/// `n` i.i.d. uniform samples from the box `[lower, upper]`, deterministic
/// per seed.
pub fn sample_uniform_noise(n: usize, lower: &[f64], upper: &[f64], seed: u64) -> Result<Matrix> {
    if lower.len() != upper.len() || lower.is_empty() {
        return Err(Error::Argument(
            "uniform noise bounds must be non-empty and of equal length".into(),
        ));
    }
    if lower
        .iter()
        .zip(upper)
        .any(|(l, u)| !l.is_finite() || !u.is_finite() || l >= u)
    {
        return Err(Error::Argument(
            "uniform noise needs lower < upper componentwise".into(),
        ));
    }
    let dim = lower.len();
    let mut rng = rng_from_seed(seed);
    let mut data = Vec::with_capacity(n * dim);
    for _ in 0..n {
        for d in 0..dim {
            data.push(rng.gen_range(lower[d]..upper[d]));
        }
    }
    Matrix::from_vec(n, dim, data)
}

/// `n` mixup samples: each row is the elementwise mean of two distinct
/// dataset rows drawn per pair.
pub fn mixup_ood(dataset: &LabeledDataset, n: usize, seed: u64) -> Result<Matrix> {
    let samples = &dataset.samples;
    if samples.rows() < 2 {
        return Err(Error::Argument("mixup needs at least 2 samples".into()));
    }
    let mut rng = rng_from_seed(seed);
    let mut data = Vec::with_capacity(n * samples.cols());
    for _ in 0..n {
        let i = rng.gen_range(0..samples.rows());
        let j = loop {
            let j = rng.gen_range(0..samples.rows());
            if j != i {
                break j;
            }
        };
        for (a, b) in samples.row(i).iter().zip(samples.row(j)) {
            data.push(0.5 * (a + b));
        }
    }
    Matrix::from_vec(n, samples.cols(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_model() -> FeedforwardClassifier {
        FeedforwardClassifier::mlp(2, &[8], 2, 42).unwrap()
    }

    fn toy_data(n: usize) -> LabeledDataset {
        crate::data::synthetic::generate_two_moons(n, 0.1, 5).unwrap()
    }

    #[test]
    fn tau_one_flags_nothing_tau_zero_flags_everything() {
        let model = toy_model();
        let data = toy_data(50);
        let none = detect_ood(&model, &data, 1.0).unwrap();
        assert!(none.ood_indices.is_empty());
        // A freshly initialized net is nowhere exactly one-hot, so every
        // score is strictly positive.
        let all = detect_ood(&model, &data, 0.0).unwrap();
        assert_eq!(all.ood_indices.len(), 50);
    }

    #[test]
    fn detection_is_monotone_in_tau() {
        let model = toy_model();
        let data = toy_data(80);
        let loose = detect_ood(&model, &data, 0.3).unwrap();
        let strict = detect_ood(&model, &data, 0.7).unwrap();
        for idx in &strict.ood_indices {
            assert!(loose.ood_indices.contains(idx));
        }
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let model = toy_model();
        let empty = LabeledDataset::unlabeled(Matrix::zeros(0, 2));
        assert!(detect_ood(&model, &empty, 0.5).is_err());
    }

    #[test]
    fn uniform_noise_respects_bounds_and_seed() {
        let a = sample_uniform_noise(100, &[-4.0, -4.0], &[4.0, 4.0], 11).unwrap();
        assert_eq!((a.rows(), a.cols()), (100, 2));
        assert!(a.data().iter().all(|&v| (-4.0..4.0).contains(&v)));
        let b = sample_uniform_noise(100, &[-4.0, -4.0], &[4.0, 4.0], 11).unwrap();
        assert_eq!(a, b);
        let empty = sample_uniform_noise(0, &[0.0], &[1.0], 0).unwrap();
        assert_eq!(empty.rows(), 0);
        assert!(sample_uniform_noise(1, &[1.0], &[1.0], 0).is_err());
    }

    #[test]
    fn mixup_averages_two_distinct_rows() {
        let ds = LabeledDataset::unlabeled(
            Matrix::from_vec(2, 2, vec![0.0, 2.0, 2.0, 0.0]).unwrap(),
        );
        let m = mixup_ood(&ds, 5, 3).unwrap();
        // Only one distinct pair exists, so every output is its average.
        for r in 0..5 {
            assert_eq!(m.row(r), &[1.0, 1.0]);
        }
        let single = LabeledDataset::unlabeled(Matrix::zeros(1, 2));
        assert!(mixup_ood(&single, 1, 0).is_err());
    }

    #[test]
    fn mixup_outputs_lie_between_their_parents() {
        let ds = toy_data(60);
        let m = mixup_ood(&ds, 500, 9).unwrap();
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in ds.samples.data() {
            lo = lo.min(*v);
            hi = hi.max(*v);
        }
        // Convex combinations stay inside the elementwise hull of the inputs.
        assert!(m.data().iter().all(|&v| v >= lo - 1e-12 && v <= hi + 1e-12));
    }
}
