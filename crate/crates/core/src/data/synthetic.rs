//! Synthetic 2-D datasets: interleaving half-moons and isotropic Gaussian
//! blobs.

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::seeded::{rng_from_seed, sample_standard_normal};

/// Two interleaving half-circles plus isotropic Gaussian noise.
///
/// Class 0 is the upper unit half-circle `(cos t, sin t)`, class 1 the
/// reflected arc `(1 - cos t, 1/2 - sin t)`, both with `t` evenly spaced over
/// `[0, pi]`. Labels are balanced: class 0 receives `n - n/2` points.
pub fn generate_two_moons(n: usize, noise: f64, seed: u64) -> Result<LabeledDataset> {
    if n < 2 {
        return Err(Error::Argument("two moons needs n >= 2".into()));
    }
    if !(noise.is_finite() && noise >= 0.0) {
        return Err(Error::Argument("noise must be >= 0".into()));
    }
    let n0 = n - n / 2;
    let n1 = n / 2;
    let mut rng = rng_from_seed(seed);
    let mut data = Vec::with_capacity(n * 2);
    let mut labels = Vec::with_capacity(n);

    let arc = |count: usize, idx: usize| {
        if count == 1 {
            0.0
        } else {
            std::f64::consts::PI * idx as f64 / (count - 1) as f64
        }
    };
    for i in 0..n0 {
        let t = arc(n0, i);
        data.push(t.cos());
        data.push(t.sin());
        labels.push(0);
    }
    for i in 0..n1 {
        let t = arc(n1, i);
        data.push(1.0 - t.cos());
        data.push(0.5 - t.sin());
        labels.push(1);
    }
    if noise > 0.0 {
        for v in &mut data {
            *v += noise * sample_standard_normal(&mut rng);
        }
    }
    LabeledDataset::new(Matrix::from_vec(n, 2, data)?, Some(labels))
}

/// Isotropic Gaussian blob around each center, `counts[b]` samples for blob
/// `b`, labeled by blob index.
pub fn generate_blobs_counts(
    centers: &[Vec<f64>],
    std: f64,
    counts: &[usize],
    seed: u64,
) -> Result<LabeledDataset> {
    if centers.is_empty() {
        return Err(Error::Argument("blobs need at least one center".into()));
    }
    if counts.len() != centers.len() {
        return Err(Error::Argument(format!(
            "{} counts for {} centers",
            counts.len(),
            centers.len()
        )));
    }
    if !(std.is_finite() && std > 0.0) {
        return Err(Error::Argument("blob std must be > 0".into()));
    }
    let dim = centers[0].len();
    if centers.iter().any(|c| c.len() != dim) {
        return Err(Error::Argument("blob centers must share one dimension".into()));
    }
    let mut rng = rng_from_seed(seed);
    let total: usize = counts.iter().sum();
    let mut data = Vec::with_capacity(total * dim);
    let mut labels = Vec::with_capacity(total);
    for (b, center) in centers.iter().enumerate() {
        for _ in 0..counts[b] {
            for &c in center {
                data.push(c + std * sample_standard_normal(&mut rng));
            }
            labels.push(b);
        }
    }
    LabeledDataset::new(Matrix::from_vec(total, dim, data)?, Some(labels))
}

/// [`generate_blobs_counts`] with the same count per center.
pub fn generate_blobs(
    centers: &[Vec<f64>],
    std: f64,
    n_per: usize,
    seed: u64,
) -> Result<LabeledDataset> {
    let counts = vec![n_per; centers.len()];
    generate_blobs_counts(centers, std, &counts, seed)
}

/// Splits `total` into `parts` counts differing by at most one, largest
/// first.
pub fn even_counts(total: usize, parts: usize) -> Vec<usize> {
    if parts == 0 {
        return Vec::new();
    }
    let base = total / parts;
    let extra = total % parts;
    (0..parts).map(|i| base + usize::from(i < extra)).collect()
}
