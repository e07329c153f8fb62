//! Datasets: labeled sample matrices, class-based splits, CSV export.

pub mod idx;
pub mod synthetic;

use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::seeded::{rng_from_seed, shuffle_indices};

/// Sample matrix with optional integer labels and class names.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub samples: Matrix,
    pub labels: Option<Vec<usize>>,
    pub class_names: Option<Vec<String>>,
}

impl LabeledDataset {
    pub fn new(samples: Matrix, labels: Option<Vec<usize>>) -> Result<Self> {
        if let Some(l) = &labels {
            if l.len() != samples.rows() {
                return Err(Error::Shape(format!(
                    "{} labels for {} samples",
                    l.len(),
                    samples.rows()
                )));
            }
        }
        Ok(LabeledDataset {
            samples,
            labels,
            class_names: None,
        })
    }

    pub fn unlabeled(samples: Matrix) -> Self {
        LabeledDataset {
            samples,
            labels: None,
            class_names: None,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn labels(&self) -> Result<&[usize]> {
        self.labels
            .as_deref()
            .ok_or_else(|| Error::Argument("dataset has no labels".into()))
    }

    /// Number of classes assuming dense labels from 0.
    pub fn num_classes(&self) -> Result<usize> {
        Ok(self.labels()?.iter().copied().max().map_or(0, |m| m + 1))
    }

    /// Copy without labels, e.g. the unlabeled test view of an eval set.
    pub fn strip_labels(&self) -> Self {
        LabeledDataset {
            samples: self.samples.clone(),
            labels: None,
            class_names: None,
        }
    }

    /// New dataset with the given rows (labels follow when present).
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let samples = self.samples.select_rows(indices)?;
        let labels = self
            .labels
            .as_ref()
            .map(|l| indices.iter().map(|&i| l[i]).collect());
        Ok(LabeledDataset {
            samples,
            labels,
            class_names: self.class_names.clone(),
        })
    }

    /// Row-wise concatenation; both sides must agree on labeledness.
    pub fn concat(&self, other: &LabeledDataset) -> Result<Self> {
        let samples = self.samples.vstack(&other.samples)?;
        let labels = match (&self.labels, &other.labels) {
            (Some(a), Some(b)) => {
                let mut l = a.clone();
                l.extend_from_slice(b);
                Some(l)
            }
            (None, None) => None,
            _ => {
                return Err(Error::Argument(
                    "cannot concatenate labeled with unlabeled data".into(),
                ))
            }
        };
        Ok(LabeledDataset {
            samples,
            labels,
            class_names: self.class_names.clone(),
        })
    }
}

/// Which classes to hold out as novel, plus a seed reserved for any
/// subsampling applied after the split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitSpec {
    pub held_out_classes: Vec<usize>,
    pub seed: u64,
}

/// Result of [`split_by_class`]: the kept partition with densely remapped
/// labels, the held-out partition with original labels, and the bijection
/// `new label -> original class`.
#[derive(Debug, Clone)]
pub struct ClassSplit {
    pub train: LabeledDataset,
    pub heldout: LabeledDataset,
    pub kept_classes: Vec<usize>,
}

impl ClassSplit {
    /// Original class id for a remapped train label.
    pub fn original_class(&self, train_label: usize) -> Option<usize> {
        self.kept_classes.get(train_label).copied()
    }
}

/// Partitions by class membership. Every held-out class must actually occur.
/// Train labels are remapped onto `0..q-1` in ascending original-class order;
/// held-out samples keep their original labels.
pub fn split_by_class(dataset: &LabeledDataset, spec: &SplitSpec) -> Result<ClassSplit> {
    let labels = dataset.labels()?;
    let mut held = spec.held_out_classes.clone();
    held.sort_unstable();
    held.dedup();
    for h in &held {
        if !labels.contains(h) {
            return Err(Error::Argument(format!(
                "held-out class {h} does not occur in the data"
            )));
        }
    }

    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let kept_classes: Vec<usize> = classes
        .iter()
        .copied()
        .filter(|c| !held.contains(c))
        .collect();
    if kept_classes.is_empty() {
        return Err(Error::Argument("no classes left after holding out".into()));
    }

    let remap = |c: usize| kept_classes.iter().position(|&k| k == c);
    let mut train_idx = Vec::new();
    let mut held_idx = Vec::new();
    for (i, &c) in labels.iter().enumerate() {
        if held.contains(&c) {
            held_idx.push(i);
        } else {
            train_idx.push(i);
        }
    }

    let mut train = dataset.select(&train_idx)?;
    if let Some(l) = train.labels.as_mut() {
        for v in l.iter_mut() {
            *v = remap(*v).expect("kept class");
        }
    }
    let heldout = dataset.select(&held_idx)?;
    Ok(ClassSplit {
        train,
        heldout,
        kept_classes,
    })
}

/// Deterministic random subsample of `n` rows (all rows when `n >= len`).
pub fn subsample(dataset: &LabeledDataset, n: usize, seed: u64) -> Result<LabeledDataset> {
    if n >= dataset.len() {
        return Ok(dataset.clone());
    }
    let mut rng = rng_from_seed(seed);
    let mut idx = shuffle_indices(dataset.len(), &mut rng);
    idx.truncate(n);
    idx.sort_unstable();
    dataset.select(&idx)
}

/// Writes `x0,x1,...,label` CSV; the label column is omitted for unlabeled
/// datasets.
pub fn export_csv(dataset: &LabeledDataset, path: &Path) -> Result<()> {
    let cols = dataset.samples.cols();
    let mut out = String::new();
    for c in 0..cols {
        if c > 0 {
            out.push(',');
        }
        out.push_str(&format!("x{c}"));
    }
    if dataset.labels.is_some() {
        out.push_str(",label");
    }
    out.push('\n');
    for r in 0..dataset.len() {
        let row = dataset.samples.row(r);
        for (c, v) in row.iter().enumerate() {
            if c > 0 {
                out.push(',');
            }
            out.push_str(&format!("{v}"));
        }
        if let Some(l) = &dataset.labels {
            out.push_str(&format!(",{}", l[r]));
        }
        out.push('\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}
