//! Segment-aggregated losses for the segmentation-style variant.
//!
//! A segment is a set of pixel positions treated as one OoD candidate; its
//! probability vector is the per-class mean over its pixels. With singleton
//! segments these reduce exactly to the classification losses.
//!
//! Note on sign: the segment extension loss is defined here as the segment
//! mean of the per-pixel extension loss, i.e. non-negative and minimized at
//! zero, keeping it consistent with the per-image formulation it aggregates.

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Per-pixel logit gradients as `(pixel_index, gradient)` in segment order.
pub type PixelGrads = Vec<(usize, Vec<f64>)>;

/// Per-class arithmetic mean of the segment's pixel probability vectors.
pub fn segment_mean_softmax(pixel_probs: &Matrix, segment: &[usize]) -> Result<Vec<f64>> {
    check_segment(pixel_probs, segment)?;
    let mut mean = vec![0.0; pixel_probs.cols()];
    for &z in segment {
        for (c, m) in mean.iter_mut().enumerate() {
            *m += pixel_probs.get(z, c);
        }
    }
    let n = segment.len() as f64;
    for m in &mut mean {
        *m /= n;
    }
    Ok(mean)
}

/// Mean known-class probability mass over the segment's pixels.
pub fn segment_extension_loss(pixel_probs: &Matrix, segment: &[usize], q: usize) -> Result<f64> {
    check_segment(pixel_probs, segment)?;
    if q >= pixel_probs.cols() {
        return Err(Error::Argument(format!(
            "segment extension loss needs q < {} output classes, got q = {q}",
            pixel_probs.cols()
        )));
    }
    let mut total = 0.0;
    for &z in segment {
        total += super::extension_loss(pixel_probs.row(z), q)?;
    }
    Ok(total / segment.len() as f64)
}

/// Gradient of [`segment_extension_loss`] with respect to each segment
/// pixel's logits, returned as `(pixel_index, grad)` pairs in segment order.
pub fn segment_extension_loss_grads(
    pixel_probs: &Matrix,
    segment: &[usize],
    q: usize,
) -> Result<PixelGrads> {
    check_segment(pixel_probs, segment)?;
    let n = segment.len() as f64;
    segment
        .iter()
        .map(|&z| {
            let mut g = super::extension_loss_grad(pixel_probs.row(z), q)?;
            for v in &mut g {
                *v /= n;
            }
            Ok((z, g))
        })
        .collect()
}

/// Distance-weighted overlap of two segments' mean probability vectors:
/// `(alpha / (q + k)) * d_ij * sum_c mean_i[c] * mean_j[c]`.
#[allow(clippy::too_many_arguments)]
pub fn segment_cluster_loss(
    pixel_probs_i: &Matrix,
    segment_i: &[usize],
    pixel_probs_j: &Matrix,
    segment_j: &[usize],
    d_ij: f64,
    alpha: f64,
    q: usize,
    k: usize,
) -> Result<f64> {
    let mean_i = segment_mean_softmax(pixel_probs_i, segment_i)?;
    let mean_j = segment_mean_softmax(pixel_probs_j, segment_j)?;
    check_width(&mean_i, &mean_j, q, k)?;
    super::cluster_loss(&mean_i, &mean_j, d_ij, alpha)
}

/// Gradients of [`segment_cluster_loss`] with respect to every pixel logit of
/// both segments.
#[allow(clippy::too_many_arguments)]
pub fn segment_cluster_loss_grads(
    pixel_probs_i: &Matrix,
    segment_i: &[usize],
    pixel_probs_j: &Matrix,
    segment_j: &[usize],
    d_ij: f64,
    alpha: f64,
    q: usize,
    k: usize,
) -> Result<(PixelGrads, PixelGrads)> {
    let mean_i = segment_mean_softmax(pixel_probs_i, segment_i)?;
    let mean_j = segment_mean_softmax(pixel_probs_j, segment_j)?;
    check_width(&mean_i, &mean_j, q, k)?;
    if !(d_ij.is_finite() && d_ij >= 0.0) {
        return Err(Error::Argument(format!("distance must be >= 0, got {d_ij}")));
    }
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::Argument(format!("alpha must be > 0, got {alpha}")));
    }
    let width = q + k;
    let coef = alpha / width as f64 * d_ij;

    // d/dz of sum_c mean_i[c] * mean_j[c] for a pixel z in segment i:
    // (1/|Z_i|) * p_z ⊙ (mean_j - <p_z, mean_j>).
    let per_segment = |probs: &Matrix, segment: &[usize], other_mean: &[f64]| {
        let n = segment.len() as f64;
        segment
            .iter()
            .map(|&z| {
                let p = probs.row(z);
                let dot: f64 = p.iter().zip(other_mean).map(|(a, b)| a * b).sum();
                let g = p
                    .iter()
                    .zip(other_mean)
                    .map(|(&pz, &m)| coef / n * pz * (m - dot))
                    .collect();
                (z, g)
            })
            .collect::<Vec<_>>()
    };
    Ok((
        per_segment(pixel_probs_i, segment_i, &mean_j),
        per_segment(pixel_probs_j, segment_j, &mean_i),
    ))
}

fn check_segment(pixel_probs: &Matrix, segment: &[usize]) -> Result<()> {
    if segment.is_empty() {
        return Err(Error::Argument("segment must be non-empty".into()));
    }
    if let Some(&bad) = segment.iter().find(|&&z| z >= pixel_probs.rows()) {
        return Err(Error::Argument(format!(
            "pixel index {bad} out of range for table with {} pixels",
            pixel_probs.rows()
        )));
    }
    Ok(())
}

fn check_width(mean_i: &[f64], mean_j: &[f64], q: usize, k: usize) -> Result<()> {
    if mean_i.len() != q + k || mean_j.len() != q + k {
        return Err(Error::Shape(format!(
            "segment tables carry {} and {} classes but q + k = {}",
            mean_i.len(),
            mean_j.len(),
            q + k
        )));
    }
    Ok(())
}
