//! Loss functionals and scores for incremental learning with empty classes.
//!
//! Classification side:
//! - cross-entropy on known classes,
//! - extension loss suppressing known-class mass on OoD samples,
//! - pairwise distance-weighted cluster loss,
//! - the three-term fine-tuning objective combining them,
//! - normalized softmax-entropy score and the entropy-maximization loss with
//!   its two-term training objective.
//!
//! Every loss comes with its gradient with respect to the logits, expressed
//! through the softmax probabilities, so the network backward pass can stay
//! loss-agnostic. Segment-aggregated variants live in [`segment`].

pub mod segment;

use serde::{Deserialize, Serialize};

use crate::distances::DistanceMatrix;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Floor applied inside every logarithm.
pub const LOG_FLOOR: f64 = 1e-12;

#[inline]
fn ln_floored(p: f64) -> f64 {
    p.max(LOG_FLOOR).ln()
}

/// Weights of the fine-tuning objective (`lambda1..3`, `alpha`) and the
/// mixing weight of the entropy-maximization objective (`lambda_em`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub alpha: f64,
    #[serde(default = "default_lambda_em")]
    pub lambda_em: f64,
}

fn default_lambda_em() -> f64 {
    0.75
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda1: 0.45,
            lambda2: 0.45,
            lambda3: 0.1,
            alpha: 2.5,
            lambda_em: default_lambda_em(),
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
            ("alpha", self.alpha),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Argument(format!("{name} must be finite and >= 0")));
            }
        }
        if !(0.0..=1.0).contains(&self.lambda_em) {
            return Err(Error::Argument("lambda_em must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Numerically stable softmax (max subtraction). Requires at least two finite
/// logits.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.len() < 2 {
        return Err(Error::Argument(format!(
            "softmax needs at least 2 logits, got {}",
            logits.len()
        )));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite logit passed to softmax".into()));
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for v in &mut out {
        *v /= sum;
    }
    Ok(out)
}

/// Row-wise softmax over a batch of logits.
pub fn softmax_rows(logits: &Matrix) -> Result<Matrix> {
    let mut out = Matrix::zeros(logits.rows(), logits.cols());
    for r in 0..logits.rows() {
        let p = softmax(logits.row(r))?;
        out.row_mut(r).copy_from_slice(&p);
    }
    Ok(out)
}

/// Index of the largest probability; ties go to the lowest class index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// `-log p[label]`.
pub fn cross_entropy(probs: &[f64], label: usize) -> Result<f64> {
    if label >= probs.len() {
        return Err(Error::Argument(format!(
            "label {label} out of range for {} classes",
            probs.len()
        )));
    }
    Ok(-ln_floored(probs[label]))
}

/// dCE/dlogits = softmax - onehot(label).
pub fn cross_entropy_grad(probs: &[f64], label: usize) -> Result<Vec<f64>> {
    if label >= probs.len() {
        return Err(Error::Argument(format!(
            "label {label} out of range for {} classes",
            probs.len()
        )));
    }
    Ok(probs
        .iter()
        .enumerate()
        .map(|(c, &p)| p - if c == label { 1.0 } else { 0.0 })
        .collect())
}

/// Mean probability mass on the first `q` (known) classes; zero exactly when
/// all mass sits in the empty classes.
pub fn extension_loss(probs: &[f64], q: usize) -> Result<f64> {
    if q >= probs.len() {
        return Err(Error::Argument(format!(
            "extension loss needs q < {} output classes, got q = {q}",
            probs.len()
        )));
    }
    Ok(probs[..q].iter().sum::<f64>() / q as f64)
}

/// dExt/dlogit_j = (1/q) * p_j * (1_{j<q} - sum_{c<q} p_c).
pub fn extension_loss_grad(probs: &[f64], q: usize) -> Result<Vec<f64>> {
    if q >= probs.len() {
        return Err(Error::Argument(format!(
            "extension loss needs q < {} output classes, got q = {q}",
            probs.len()
        )));
    }
    let known_mass: f64 = probs[..q].iter().sum();
    Ok(probs
        .iter()
        .enumerate()
        .map(|(j, &p)| {
            let indicator = if j < q { 1.0 } else { 0.0 };
            p * (indicator - known_mass) / q as f64
        })
        .collect())
}

/// Distance-weighted prediction overlap of one OoD pair:
/// `(alpha / C) * d_ij * sum_c p_i[c] * p_j[c]` with `C` the output width.
pub fn cluster_loss(probs_i: &[f64], probs_j: &[f64], d_ij: f64, alpha: f64) -> Result<f64> {
    check_cluster_args(probs_i, probs_j, d_ij, alpha)?;
    let overlap: f64 = probs_i.iter().zip(probs_j).map(|(a, b)| a * b).sum();
    Ok(alpha / probs_i.len() as f64 * d_ij * overlap)
}

/// Gradients of [`cluster_loss`] with respect to both samples' logits.
pub fn cluster_loss_grads(
    probs_i: &[f64],
    probs_j: &[f64],
    d_ij: f64,
    alpha: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_cluster_args(probs_i, probs_j, d_ij, alpha)?;
    let coef = alpha / probs_i.len() as f64 * d_ij;
    let overlap: f64 = probs_i.iter().zip(probs_j).map(|(a, b)| a * b).sum();
    let grad_i = probs_i
        .iter()
        .zip(probs_j)
        .map(|(&pi, &pj)| coef * pi * (pj - overlap))
        .collect();
    let grad_j = probs_j
        .iter()
        .zip(probs_i)
        .map(|(&pj, &pi)| coef * pj * (pi - overlap))
        .collect();
    Ok((grad_i, grad_j))
}

fn check_cluster_args(probs_i: &[f64], probs_j: &[f64], d_ij: f64, alpha: f64) -> Result<()> {
    if probs_i.len() != probs_j.len() {
        return Err(Error::Shape(format!(
            "cluster loss needs equal-length vectors, got {} and {}",
            probs_i.len(),
            probs_j.len()
        )));
    }
    if !(d_ij.is_finite() && d_ij >= 0.0) {
        return Err(Error::Argument(format!("distance must be >= 0, got {d_ij}")));
    }
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::Argument(format!("alpha must be > 0, got {alpha}")));
    }
    Ok(())
}

/// Softmax entropy normalized to `[0, 1]`: 1 at the uniform vector, 0 at a
/// one-hot vector (`0 * log 0 := 0`).
pub fn entropy_score(probs: &[f64]) -> f64 {
    assert!(probs.len() >= 2, "entropy score needs >= 2 classes");
    let q = probs.len() as f64;
    let mut s = 0.0;
    for &p in probs {
        if p > 0.0 {
            s += p * p.ln();
        }
    }
    -s / q.ln()
}

/// Cross-entropy against the uniform distribution:
/// `-(1/q) * sum_c log p_c`, minimized (value `ln q`) exactly at uniform.
pub fn entropy_max_loss(probs: &[f64]) -> f64 {
    assert!(probs.len() >= 2, "entropy-max loss needs >= 2 classes");
    let q = probs.len() as f64;
    -probs.iter().map(|&p| ln_floored(p)).sum::<f64>() / q
}

/// dEm/dlogits = softmax - uniform.
pub fn entropy_max_grad(probs: &[f64]) -> Vec<f64> {
    let q = probs.len() as f64;
    probs.iter().map(|&p| p - 1.0 / q).collect()
}

/// Three-term fine-tuning objective over one batch.
///
/// `lambda1 * mean CE(in-dist) + lambda2 * mean ext(OoD) + lambda3 * mean
/// over unordered OoD pairs of the cluster loss`. Pairs are enumerated once
/// (`i < j` in batch order) and the pair term is averaged so `lambda3` is
/// batch-size-invariant. `ood_ids` gives each OoD row's index into the
/// distance matrix.
pub fn total_objective(
    in_probs: &Matrix,
    labels: &[usize],
    ood_probs: &Matrix,
    ood_ids: &[usize],
    distances: &DistanceMatrix,
    weights: &LossWeights,
    q: usize,
) -> Result<f64> {
    total_objective_impl(in_probs, labels, ood_probs, ood_ids, distances, weights, q, false)
        .map(|(v, _, _)| v)
}

/// [`total_objective`] plus per-row gradients with respect to the
/// in-distribution and OoD logits.
pub fn total_objective_grads(
    in_probs: &Matrix,
    labels: &[usize],
    ood_probs: &Matrix,
    ood_ids: &[usize],
    distances: &DistanceMatrix,
    weights: &LossWeights,
    q: usize,
) -> Result<(f64, Matrix, Matrix)> {
    total_objective_impl(in_probs, labels, ood_probs, ood_ids, distances, weights, q, true)
        .map(|(v, gi, go)| (v, gi.expect("grads requested"), go.expect("grads requested")))
}

#[allow(clippy::too_many_arguments)]
fn total_objective_impl(
    in_probs: &Matrix,
    labels: &[usize],
    ood_probs: &Matrix,
    ood_ids: &[usize],
    distances: &DistanceMatrix,
    weights: &LossWeights,
    q: usize,
    want_grads: bool,
) -> Result<(f64, Option<Matrix>, Option<Matrix>)> {
    weights.validate()?;
    if in_probs.rows() != labels.len() {
        return Err(Error::Shape(format!(
            "{} in-distribution rows but {} labels",
            in_probs.rows(),
            labels.len()
        )));
    }
    if ood_probs.rows() != ood_ids.len() {
        return Err(Error::Shape(format!(
            "{} OoD rows but {} distance ids",
            ood_probs.rows(),
            ood_ids.len()
        )));
    }
    for &id in ood_ids {
        if id >= distances.n() {
            return Err(Error::Consistency(format!(
                "no distance entry for OoD sample {id}: matrix covers {} samples",
                distances.n()
            )));
        }
    }

    let mut grad_in = want_grads.then(|| Matrix::zeros(in_probs.rows(), in_probs.cols()));
    let mut grad_ood = want_grads.then(|| Matrix::zeros(ood_probs.rows(), ood_probs.cols()));
    let mut value = 0.0;

    // Term 1: cross-entropy on known classes.
    if in_probs.rows() > 0 && weights.lambda1 > 0.0 {
        let n = in_probs.rows() as f64;
        for (r, &label) in labels.iter().enumerate() {
            value += weights.lambda1 * cross_entropy(in_probs.row(r), label)? / n;
            if let Some(g) = grad_in.as_mut() {
                let ce_grad = cross_entropy_grad(in_probs.row(r), label)?;
                let row = g.row_mut(r);
                for (c, gc) in ce_grad.iter().enumerate() {
                    row[c] += weights.lambda1 * gc / n;
                }
            }
        }
    }

    // Term 2: extension loss on OoD samples.
    if ood_probs.rows() > 0 && weights.lambda2 > 0.0 {
        let n = ood_probs.rows() as f64;
        for r in 0..ood_probs.rows() {
            value += weights.lambda2 * extension_loss(ood_probs.row(r), q)? / n;
            if let Some(g) = grad_ood.as_mut() {
                let ext_grad = extension_loss_grad(ood_probs.row(r), q)?;
                let row = g.row_mut(r);
                for (c, gc) in ext_grad.iter().enumerate() {
                    row[c] += weights.lambda2 * gc / n;
                }
            }
        }
    }

    // Term 3: cluster loss over all unordered OoD pairs in the batch.
    let n_ood = ood_probs.rows();
    if n_ood >= 2 && weights.lambda3 > 0.0 && weights.alpha > 0.0 {
        let n_pairs = (n_ood * (n_ood - 1) / 2) as f64;
        for i in 0..n_ood {
            for j in (i + 1)..n_ood {
                let d_ij = distances.get(ood_ids[i], ood_ids[j]);
                let scale = weights.lambda3 / n_pairs;
                if let Some(g) = grad_ood.as_mut() {
                    let (gi, gj) = cluster_loss_grads(
                        ood_probs.row(i),
                        ood_probs.row(j),
                        d_ij,
                        weights.alpha,
                    )?;
                    for (c, v) in gi.iter().enumerate() {
                        let cur = g.get(i, c);
                        g.set(i, c, cur + scale * v);
                    }
                    for (c, v) in gj.iter().enumerate() {
                        let cur = g.get(j, c);
                        g.set(j, c, cur + scale * v);
                    }
                }
                value +=
                    scale * cluster_loss(ood_probs.row(i), ood_probs.row(j), d_ij, weights.alpha)?;
            }
        }
    }

    Ok((value, grad_in, grad_ood))
}

/// Two-term initial-training objective:
/// `lambda_em * mean CE(in-dist) + (1 - lambda_em) * mean em(OoD)`.
pub fn entropy_max_objective(
    in_probs: &Matrix,
    labels: &[usize],
    ood_probs: &Matrix,
    lambda_em: f64,
) -> Result<f64> {
    entropy_max_objective_impl(in_probs, labels, ood_probs, lambda_em, false).map(|(v, _, _)| v)
}

/// [`entropy_max_objective`] plus gradients for both sub-batches' logits.
pub fn entropy_max_objective_grads(
    in_probs: &Matrix,
    labels: &[usize],
    ood_probs: &Matrix,
    lambda_em: f64,
) -> Result<(f64, Matrix, Matrix)> {
    entropy_max_objective_impl(in_probs, labels, ood_probs, lambda_em, true)
        .map(|(v, gi, go)| (v, gi.expect("grads requested"), go.expect("grads requested")))
}

fn entropy_max_objective_impl(
    in_probs: &Matrix,
    labels: &[usize],
    ood_probs: &Matrix,
    lambda_em: f64,
    want_grads: bool,
) -> Result<(f64, Option<Matrix>, Option<Matrix>)> {
    if !(0.0..=1.0).contains(&lambda_em) {
        return Err(Error::Argument("lambda_em must lie in [0, 1]".into()));
    }
    if in_probs.rows() != labels.len() {
        return Err(Error::Shape(format!(
            "{} in-distribution rows but {} labels",
            in_probs.rows(),
            labels.len()
        )));
    }
    let mut grad_in = want_grads.then(|| Matrix::zeros(in_probs.rows(), in_probs.cols()));
    let mut grad_ood = want_grads.then(|| Matrix::zeros(ood_probs.rows(), ood_probs.cols()));
    let mut value = 0.0;

    if in_probs.rows() > 0 && lambda_em > 0.0 {
        let n = in_probs.rows() as f64;
        for (r, &label) in labels.iter().enumerate() {
            value += lambda_em * cross_entropy(in_probs.row(r), label)? / n;
            if let Some(g) = grad_in.as_mut() {
                let ce_grad = cross_entropy_grad(in_probs.row(r), label)?;
                let row = g.row_mut(r);
                for (c, gc) in ce_grad.iter().enumerate() {
                    row[c] += lambda_em * gc / n;
                }
            }
        }
    }
    if ood_probs.rows() > 0 && lambda_em < 1.0 {
        let n = ood_probs.rows() as f64;
        for r in 0..ood_probs.rows() {
            value += (1.0 - lambda_em) * entropy_max_loss(ood_probs.row(r)) / n;
            if let Some(g) = grad_ood.as_mut() {
                let em_grad = entropy_max_grad(ood_probs.row(r));
                let row = g.row_mut(r);
                for (c, gc) in em_grad.iter().enumerate() {
                    row[c] += (1.0 - lambda_em) * gc / n;
                }
            }
        }
    }
    Ok((value, grad_in, grad_ood))
}
