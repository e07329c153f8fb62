//! Lloyd's k-means with k-means++ seeding; pseudo-labeler for the baseline.

use rand::Rng;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::seeded::rng_from_seed;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

/// k-means++ seeding: first centroid uniform, each further centroid drawn
/// with probability proportional to squared distance from the chosen set.
fn seed_centroids(points: &Matrix, k: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Vec<usize> {
    let n = points.rows();
    let mut chosen = Vec::with_capacity(k);
    chosen.push(rng.gen_range(0..n));
    let mut d2: Vec<f64> = (0..n)
        .map(|i| sq_dist(points.row(i), points.row(chosen[0])))
        .collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total <= 0.0 {
            // All remaining points coincide with a centroid; pick the first
            // unchosen index for determinism.
            (0..n).find(|i| !chosen.contains(i)).unwrap_or(0)
        } else {
            let mut target = rng.gen_range(0.0..total);
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            pick
        };
        chosen.push(next);
        for (i, slot) in d2.iter_mut().enumerate() {
            *slot = slot.min(sq_dist(points.row(i), points.row(next)));
        }
    }
    chosen
}

/// Lloyd iterations from k-means++ seeding until the assignment reaches a
/// fixpoint or `max_iters` passes. Deterministic per seed.
pub fn kmeans(
    points: &Matrix,
    k: usize,
    max_iters: usize,
    seed: u64,
) -> Result<(Matrix, Vec<usize>)> {
    let n = points.rows();
    if k == 0 || k > n {
        return Err(Error::Argument(format!(
            "k must lie in 1..={n} for {n} points, got {k}"
        )));
    }
    let dim = points.cols();
    let mut rng = rng_from_seed(seed);
    let seeds = seed_centroids(points, k, &mut rng);
    let mut centroids = points.select_rows(&seeds)?;
    let mut assignment = vec![usize::MAX; n];

    for _ in 0..max_iters {
        // Assign: nearest centroid, lowest index on ties.
        let mut changed = false;
        for (i, slot) in assignment.iter_mut().enumerate() {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for c in 0..k {
                let d = sq_dist(points.row(i), centroids.row(c));
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            if *slot != best {
                *slot = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        // Update means; re-seed empty clusters at the point farthest from its
        // centroid.
        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            counts[assignment[i]] += 1;
            for (d, v) in points.row(i).iter().enumerate() {
                sums[assignment[i] * dim + d] += v;
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                let far = (0..n)
                    .max_by(|&a, &b| {
                        sq_dist(points.row(a), centroids.row(assignment[a]))
                            .total_cmp(&sq_dist(points.row(b), centroids.row(assignment[b])))
                    })
                    .expect("n >= 1");
                centroids.row_mut(c).copy_from_slice(points.row(far));
            } else {
                for d in 0..dim {
                    centroids.set(c, d, sums[c * dim + d] / counts[c] as f64);
                }
            }
        }
    }
    Ok((centroids, assignment))
}

/// Within-cluster sum of squared distances.
pub fn inertia(points: &Matrix, centroids: &Matrix, assignment: &[usize]) -> f64 {
    (0..points.rows())
        .map(|i| sq_dist(points.row(i), centroids.row(assignment[i])))
        .sum()
}
