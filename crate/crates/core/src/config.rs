//! Experiment configuration: flat `key = value` sections in TOML, one file
//! per experiment. Unknown keys are rejected, defaults are encoded here, and
//! parse -> serialize -> parse is the identity.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::nn::OptimizerConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Experiment name used in the manifest; defaults to "experiment".
    #[serde(default = "default_name")]
    pub name: String,
    /// Master seed; every stage derives its own stream from it.
    pub seed: u64,
    pub dataset: DatasetSpec,
    pub model: ModelSpec,
    pub losses: LossWeights,
    pub initial_training: TrainingSpec,
    pub detection: DetectionSpec,
    pub extension: ExtensionSpec,
    pub finetune: FinetuneSpec,
    #[serde(default)]
    pub distance: DistanceSpec,
    #[serde(default)]
    pub ablation: AblationFlags,
    /// Optional thresholds evaluated by `run --check`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acceptance: Option<AcceptanceThresholds>,
}

fn default_name() -> String {
    "experiment".into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    /// Two interleaving half-moons as known classes, Gaussian blobs as the
    /// novel classes appearing at test time.
    TwoMoons,
    /// MNIST-style IDX image/label pairs with class-based holdout.
    Idx,
}

/// Dataset description. Which fields apply depends on `kind`; fields of the
/// other kind must stay unset and missing values fall back to the documented
/// defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub kind: DatasetKind,

    // -- two_moons fields -------------------------------------------------
    /// In-distribution training samples (default 1000).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_samples: Option<usize>,
    /// Gaussian noise std on the moons (default 0.1).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<f64>,
    /// In-distribution test samples (default 750).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_samples: Option<usize>,
    /// Novel blob centers (default the three blobs at (-1.5,-0.95),
    /// (2.5,1.5), (3,-1)).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub novel_centers: Option<Vec<Vec<f64>>>,
    /// Novel blob std (default 0.25).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub novel_std: Option<f64>,
    /// Total novel samples, split as evenly as possible over the centers
    /// (default 500).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub novel_samples: Option<usize>,

    // -- idx fields --------------------------------------------------------
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_images: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_labels: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_images: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_labels: Option<PathBuf>,
    /// Classes excluded from training and treated as novel.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub held_out_classes: Option<Vec<usize>>,
    /// Random subsample cap on the training split after holdout (default:
    /// keep everything).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_train_samples: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    /// Hidden relu layer widths; the identity output layer is appended
    /// automatically. At least one hidden layer is required so the encoder
    /// can be frozen during fine-tuning.
    pub hidden: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OodSource {
    /// Uniform box noise, drawn once per experiment.
    Uniform,
    /// Mixup: averages of two in-distribution samples, redrawn each epoch.
    Mixup,
}

/// Stage-I training: cross-entropy on known classes plus entropy
/// maximization on generated known-unknowns, active in every epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSpec {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub ood_source: OodSource,
    /// Size of the known-unknown pool: for `uniform` the number of noise
    /// samples drawn (default 100); for `mixup` the number of fresh samples
    /// per epoch (default: the batch size).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ood_samples: Option<usize>,
    /// OoD sub-batch per step (default: min(pool size, batch size)).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ood_batch_size: Option<usize>,
    /// Box bounds for `uniform` (defaults [-4,-4] and [4,4]).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uniform_low: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uniform_high: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionSpec {
    /// Entropy threshold; a sample is OoD when its score strictly exceeds it.
    pub tau: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtensionSpec {
    /// Number of empty classes appended to the output layer.
    pub k: usize,
    /// Uniform init range for the new rows (default `1/sqrt(fan_in)`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_scale: Option<f64>,
}

/// Stage-IV fine-tuning of the extended model with frozen encoder; each
/// batch is half in-distribution replay, half OoD.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinetuneSpec {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DistanceSource {
    /// Euclidean distance between flattened samples.
    #[default]
    Euclidean,
    /// Externally computed matrix ingested from `i,j,distance` CSV.
    Precomputed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct DistanceSpec {
    #[serde(default)]
    pub source: DistanceSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub precomputed_path: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct AblationFlags {
    /// Take the OoD set from ground truth instead of the detector.
    #[serde(default)]
    pub oracle_detection: bool,
    /// Replace the distance matrix with the 0/1 same-class oracle.
    #[serde(default)]
    pub oracle_distance: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct AcceptanceThresholds {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_detection_recall: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_detection_fpr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_novel_assignment_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_cluster_purity: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_acc_known: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_acc_novel: Option<f64>,
}

impl DatasetSpec {
    pub fn two_moons_defaults() -> Self {
        DatasetSpec {
            kind: DatasetKind::TwoMoons,
            train_samples: None,
            noise: None,
            test_samples: None,
            novel_centers: None,
            novel_std: None,
            novel_samples: None,
            train_images: None,
            train_labels: None,
            test_images: None,
            test_labels: None,
            held_out_classes: None,
            max_train_samples: None,
        }
    }

    pub fn train_samples(&self) -> usize {
        self.train_samples.unwrap_or(1000)
    }
    pub fn noise(&self) -> f64 {
        self.noise.unwrap_or(0.1)
    }
    pub fn test_samples(&self) -> usize {
        self.test_samples.unwrap_or(750)
    }
    pub fn novel_centers(&self) -> Vec<Vec<f64>> {
        self.novel_centers.clone().unwrap_or_else(|| {
            vec![vec![-1.5, -0.95], vec![2.5, 1.5], vec![3.0, -1.0]]
        })
    }
    pub fn novel_std(&self) -> f64 {
        self.novel_std.unwrap_or(0.25)
    }
    pub fn novel_samples(&self) -> usize {
        self.novel_samples.unwrap_or(500)
    }

    fn validate(&self) -> Result<()> {
        let moons_fields = [
            ("train_samples", self.train_samples.is_some()),
            ("noise", self.noise.is_some()),
            ("test_samples", self.test_samples.is_some()),
            ("novel_centers", self.novel_centers.is_some()),
            ("novel_std", self.novel_std.is_some()),
            ("novel_samples", self.novel_samples.is_some()),
        ];
        let idx_fields = [
            ("train_images", self.train_images.is_some()),
            ("train_labels", self.train_labels.is_some()),
            ("test_images", self.test_images.is_some()),
            ("test_labels", self.test_labels.is_some()),
            ("held_out_classes", self.held_out_classes.is_some()),
            ("max_train_samples", self.max_train_samples.is_some()),
        ];
        match self.kind {
            DatasetKind::TwoMoons => {
                if let Some((name, _)) = idx_fields.iter().find(|(_, set)| *set) {
                    return Err(Error::Config(format!(
                        "dataset key '{name}' does not apply to kind = \"two_moons\""
                    )));
                }
                if self.train_samples() < 2 {
                    return Err(Error::Config("dataset.train_samples must be >= 2".into()));
                }
                if self.novel_centers().is_empty() {
                    return Err(Error::Config("dataset.novel_centers must be non-empty".into()));
                }
                let std = self.novel_std();
                if !std.is_finite() || std <= 0.0 {
                    return Err(Error::Config("dataset.novel_std must be > 0".into()));
                }
                let noise = self.noise();
                if !noise.is_finite() || noise < 0.0 {
                    return Err(Error::Config("dataset.noise must be >= 0".into()));
                }
            }
            DatasetKind::Idx => {
                if let Some((name, _)) = moons_fields.iter().find(|(_, set)| *set) {
                    return Err(Error::Config(format!(
                        "dataset key '{name}' does not apply to kind = \"idx\""
                    )));
                }
                for (name, set) in [
                    ("train_images", self.train_images.is_some()),
                    ("train_labels", self.train_labels.is_some()),
                    ("test_images", self.test_images.is_some()),
                    ("test_labels", self.test_labels.is_some()),
                ] {
                    if !set {
                        return Err(Error::Config(format!(
                            "dataset key '{name}' is required for kind = \"idx\""
                        )));
                    }
                }
                match &self.held_out_classes {
                    Some(h) if !h.is_empty() => {}
                    _ => {
                        return Err(Error::Config(
                            "dataset.held_out_classes must name at least one class".into(),
                        ))
                    }
                }
            }
        }
        Ok(())
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        if self.model.hidden.is_empty() {
            return Err(Error::Config(
                "model.hidden must name at least one hidden layer".into(),
            ));
        }
        if self.model.hidden.contains(&0) {
            return Err(Error::Config("model.hidden widths must be positive".into()));
        }
        self.losses
            .validate()
            .map_err(|e| Error::Config(format!("losses: {e}")))?;
        for (section, epochs, batch) in [
            ("initial_training", self.initial_training.epochs, self.initial_training.batch_size),
            ("finetune", self.finetune.epochs, self.finetune.batch_size),
        ] {
            if epochs == 0 {
                return Err(Error::Config(format!("{section}.epochs must be >= 1")));
            }
            if batch < 2 {
                return Err(Error::Config(format!("{section}.batch_size must be >= 2")));
            }
        }
        self.initial_training
            .optimizer
            .validate()
            .map_err(|e| Error::Config(format!("initial_training.optimizer: {e}")))?;
        self.finetune
            .optimizer
            .validate()
            .map_err(|e| Error::Config(format!("finetune.optimizer: {e}")))?;
        if !(0.0..=1.0).contains(&self.detection.tau) {
            return Err(Error::Config("detection.tau must lie in [0, 1]".into()));
        }
        if self.extension.k == 0 {
            return Err(Error::Config("extension.k must be >= 1".into()));
        }
        if let Some(s) = self.extension.init_scale {
            if !(s.is_finite() && s >= 0.0) {
                return Err(Error::Config("extension.init_scale must be >= 0".into()));
            }
        }
        if let (Some(low), Some(high)) = (
            &self.initial_training.uniform_low,
            &self.initial_training.uniform_high,
        ) {
            if low.len() != high.len()
                || low.iter().zip(high).any(|(l, h)| !l.is_finite() || !h.is_finite() || l >= h)
            {
                return Err(Error::Config(
                    "initial_training uniform bounds need lower < upper componentwise".into(),
                ));
            }
        }
        if self.distance.source == DistanceSource::Precomputed
            && self.distance.precomputed_path.is_none()
        {
            return Err(Error::Config(
                "distance.precomputed_path is required when distance.source = \"precomputed\""
                    .into(),
            ));
        }
        Ok(())
    }
}

pub fn parse_config_str(text: &str) -> Result<ExperimentConfig> {
    let config: ExperimentConfig =
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    config.validate()?;
    Ok(config)
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config_str(&text)
}

pub fn serialize_config(config: &ExperimentConfig) -> String {
    toml::to_string(config).expect("config serialization")
}


#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const MINIMAL_TWO_MOONS: &str = r#"
seed = 7

[dataset]
kind = "two_moons"

[model]
hidden = [32, 32, 32]

[losses]
lambda1 = 0.45
lambda2 = 0.45
lambda3 = 0.1
alpha = 2.5

[initial_training]
epochs = 150
batch_size = 128
ood_source = "uniform"

[initial_training.optimizer]
kind = "adam"
learning_rate = 1e-2

[detection]
tau = 0.8

[extension]
k = 3

[finetune]
epochs = 60
batch_size = 128

[finetune.optimizer]
kind = "adam"
learning_rate = 1e-2
"#;

    #[test]
    fn minimal_two_moons_parses_with_defaults() {
        let c = parse_config_str(MINIMAL_TWO_MOONS).unwrap();
        assert_eq!(c.name, "experiment");
        assert_eq!(c.dataset.train_samples(), 1000);
        assert_eq!(c.dataset.noise(), 0.1);
        assert_eq!(c.dataset.test_samples(), 750);
        assert_eq!(c.dataset.novel_samples(), 500);
        assert_eq!(c.dataset.novel_centers().len(), 3);
        assert_eq!(c.losses.lambda_em, 0.75);
        assert_eq!(c.extension.k, 3);
        assert!(!c.ablation.oracle_detection);
    }

    #[test]
    fn k_zero_is_rejected() {
        let text = MINIMAL_TWO_MOONS.replace("k = 3", "k = 0");
        let err = parse_config_str(&text).unwrap_err();
        assert!(err.to_string().contains("extension.k"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected_by_name() {
        let text = format!("{MINIMAL_TWO_MOONS}\n[detection2]\ntau = 0.5\n");
        let err = parse_config_str(&text).unwrap_err();
        assert!(err.to_string().contains("detection2"), "{err}");
    }

    #[test]
    fn cross_kind_fields_are_rejected() {
        let text = MINIMAL_TWO_MOONS.replace(
            "kind = \"two_moons\"",
            "kind = \"two_moons\"\nheld_out_classes = [1]",
        );
        let err = parse_config_str(&text).unwrap_err();
        assert!(err.to_string().contains("held_out_classes"), "{err}");
    }

    #[test]
    fn round_trip_is_identity() {
        let c = parse_config_str(MINIMAL_TWO_MOONS).unwrap();
        let text = serialize_config(&c);
        let c2 = parse_config_str(&text).unwrap();
        assert_eq!(c, c2);
        // And stable at the byte level on a second pass.
        assert_eq!(text, serialize_config(&c2));
    }

    #[test]
    fn idx_config_mirrors_reference_hyperparameters() {
        let text = r#"
name = "mnist"
seed = 1

[dataset]
kind = "idx"
train_images = "data/train-images-idx3-ubyte"
train_labels = "data/train-labels-idx1-ubyte"
test_images = "data/t10k-images-idx3-ubyte"
test_labels = "data/t10k-labels-idx1-ubyte"
held_out_classes = [0, 5, 7]
max_train_samples = 10000

[model]
hidden = [128, 64]

[losses]
lambda1 = 0.45
lambda2 = 0.45
lambda3 = 0.1
alpha = 5.0

[initial_training]
epochs = 30
batch_size = 2500
ood_source = "mixup"

[initial_training.optimizer]
kind = "adam"
learning_rate = 1e-2

[detection]
tau = 0.1

[extension]
k = 3

[finetune]
epochs = 30
batch_size = 2500

[finetune.optimizer]
kind = "adam"
learning_rate = 1e-2
"#;
        let c = parse_config_str(text).unwrap();
        assert_eq!(c.extension.k, 3);
        assert_eq!(c.finetune.epochs, 30);
        assert_eq!(c.finetune.batch_size, 2500);
        assert_eq!(c.losses.alpha, 5.0);
        assert_eq!(c.losses.lambda1, 0.45);
        assert_eq!(c.losses.lambda3, 0.1);
        let round = parse_config_str(&serialize_config(&c)).unwrap();
        assert_eq!(c, round);
    }

    #[test]
    fn idx_requires_paths() {
        let text = MINIMAL_TWO_MOONS.replace("kind = \"two_moons\"", "kind = \"idx\"");
        let err = parse_config_str(&text).unwrap_err();
        assert!(err.to_string().contains("train_images"), "{err}");
    }
}
