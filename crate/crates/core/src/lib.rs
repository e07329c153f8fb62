//! Class-incremental learning with empty classes.
//!
//! A trained dense classifier is extended by `k` unassigned output classes,
//! which are then filled with detected out-of-distribution data without any
//! labels: the extension loss pushes OoD samples away from the known
//! classes, and a pairwise distance-weighted cluster loss divides them among
//! the empty classes by similarity. OoD detection uses thresholding on the
//! normalized softmax entropy of a model trained with entropy maximization
//! on generated known-unknowns (uniform box noise or mixup averages).
//!
//! The crate ships the full experiment pipeline (training, detection,
//! distance construction, extension + fine-tuning, evaluation with optimal
//! cluster-to-class assignment), a k-means pseudo-labeling baseline, oracle
//! ablations for the detector and the distance matrix, synthetic dataset
//! generators, an IDX loader for MNIST-style corpora, and deterministic,
//! seed-pinned experiment orchestration with machine-readable artifacts.

pub mod config;
pub mod data;
pub mod distances;
pub mod error;
pub mod losses;
pub mod matrix;
pub mod nn;
pub mod ood;
pub mod pipeline;
pub mod report;
pub mod runner;
pub mod seeded;

pub use config::{parse_config, parse_config_str, serialize_config, ExperimentConfig};
pub use error::{Error, Result};
pub use matrix::Matrix;
