//! Pairwise distance matrices over detected OoD samples.
//!
//! Raw Euclidean distances feed the cluster loss directly; the 0/1 oracle
//! matrix built from ground-truth labels drives the supervised-distance
//! ablation. Externally computed matrices can be ingested from CSV.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Symmetric `n x n` distance table with zero diagonal and non-negative
/// entries; both invariants are enforced by every constructor.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    entries: Vec<f64>, // full row-major n*n, kept exactly symmetric
}

impl DistanceMatrix {
    /// Builds from the condensed upper triangle in `i < j` lexicographic
    /// order (`(0,1), (0,2), ..., (n-2,n-1)`).
    pub fn from_condensed(n: usize, upper: Vec<f64>) -> Result<Self> {
        let expected = n * n.saturating_sub(1) / 2;
        if upper.len() != expected {
            return Err(Error::Shape(format!(
                "condensed distance vector has {} entries, n = {n} needs {expected}",
                upper.len()
            )));
        }
        if let Some(&bad) = upper.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::Argument(format!("invalid distance entry {bad}")));
        }
        let mut entries = vec![0.0; n * n];
        let mut it = upper.into_iter();
        for i in 0..n {
            for j in (i + 1)..n {
                let d = it.next().expect("length checked");
                entries[i * n + j] = d;
                entries[j * n + i] = d;
            }
        }
        Ok(DistanceMatrix { n, entries })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    /// Restriction to the given sample indices, in order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        for &i in indices {
            if i >= self.n {
                return Err(Error::Argument(format!(
                    "index {i} out of range for distance matrix over {} samples",
                    self.n
                )));
            }
        }
        let m = indices.len();
        let mut entries = vec![0.0; m * m];
        for (a, &i) in indices.iter().enumerate() {
            for (b, &j) in indices.iter().enumerate() {
                entries[a * m + b] = self.get(i, j);
            }
        }
        Ok(DistanceMatrix { n: m, entries })
    }
}

/// Euclidean distances between all row pairs of `samples`.
pub fn pairwise_euclidean(samples: &Matrix) -> DistanceMatrix {
    let n = samples.rows();
    let mut upper = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        let a = samples.row(i);
        for j in (i + 1)..n {
            let b = samples.row(j);
            let mut acc = 0.0;
            for (x, y) in a.iter().zip(b) {
                let d = x - y;
                acc += d * d;
            }
            upper.push(acc.sqrt());
        }
    }
    DistanceMatrix::from_condensed(n, upper).expect("construction is well-formed")
}

/// Ground-truth ablation matrix: 0 for same-class pairs, 1 otherwise.
pub fn oracle_distance(labels: &[usize]) -> Result<DistanceMatrix> {
    if labels.is_empty() {
        return Err(Error::Argument("oracle distance needs labels".into()));
    }
    let n = labels.len();
    let mut upper = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            upper.push(if labels[i] == labels[j] { 0.0 } else { 1.0 });
        }
    }
    DistanceMatrix::from_condensed(n, upper)
}

/// Writes `i,j,distance` rows for the diagonal and upper triangle.
pub fn write_distance_csv(d: &DistanceMatrix, path: &Path) -> Result<()> {
    let mut out = String::from("i,j,distance\n");
    for i in 0..d.n() {
        for j in i..d.n() {
            out.push_str(&format!("{i},{j},{}\n", d.get(i, j)));
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Loads a precomputed distance table from `i,j,distance` CSV.
///
/// Indices refer to OoD-set order. `n` is inferred from the largest index.
/// Diagonal entries must be zero, mirrored entries must agree exactly, and
/// every off-diagonal pair must be covered by at least one direction.
pub fn load_distance_csv(path: &Path) -> Result<DistanceMatrix> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == "i,j,distance" => {}
        other => {
            return Err(Error::format(
                path,
                0,
                format!(
                    "expected header 'i,j,distance', found {:?}",
                    other.map(|(_, l)| l).unwrap_or_default()
                ),
            ))
        }
    }

    let mut triples = Vec::new();
    let mut n = 0usize;
    for (line_no, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let parse = |field: Option<&str>, what: &str| -> Result<String> {
            field.map(str::trim).map(String::from).ok_or_else(|| {
                Error::format(path, line_no as u64, format!("missing {what} column"))
            })
        };
        let i: usize = parse(parts.next(), "i")?
            .parse()
            .map_err(|e| Error::format(path, line_no as u64, format!("bad index i: {e}")))?;
        let j: usize = parse(parts.next(), "j")?
            .parse()
            .map_err(|e| Error::format(path, line_no as u64, format!("bad index j: {e}")))?;
        let dist: f64 = parse(parts.next(), "distance")?
            .parse()
            .map_err(|e| Error::format(path, line_no as u64, format!("bad distance: {e}")))?;
        if parts.next().is_some() {
            return Err(Error::format(path, line_no as u64, "too many columns"));
        }
        if !(dist.is_finite() && dist >= 0.0) {
            return Err(Error::format(
                path,
                line_no as u64,
                format!("distance must be finite and >= 0, got {dist}"),
            ));
        }
        if i == j && dist != 0.0 {
            return Err(Error::format(
                path,
                line_no as u64,
                format!("diagonal entry ({i},{i}) must be 0, got {dist}"),
            ));
        }
        n = n.max(i + 1).max(j + 1);
        triples.push((i, j, dist, line_no));
    }
    if n == 0 {
        return Err(Error::format(path, 0, "no distance entries"));
    }

    let mut entries = vec![f64::NAN; n * n];
    for i in 0..n {
        entries[i * n + i] = 0.0;
    }
    for (i, j, dist, line_no) in triples {
        for (a, b) in [(i, j), (j, i)] {
            let slot = &mut entries[a * n + b];
            if slot.is_nan() {
                *slot = dist;
            } else if *slot != dist {
                return Err(Error::format(
                    path,
                    line_no as u64,
                    format!(
                        "asymmetric entries for pair ({i},{j}): {} vs {dist}",
                        *slot
                    ),
                ));
            }
        }
    }
    if let Some(flat) = entries.iter().position(|v| v.is_nan()) {
        return Err(Error::format(
            path,
            0,
            format!("missing distance entry for pair ({}, {})", flat / n, flat % n),
        ));
    }
    Ok(DistanceMatrix { n, entries })
}
