//! Experiment orchestration: runs pipeline stages end to end or one at a
//! time, persisting stage artifacts in the output directory so stages can be
//! chained across process invocations.
//!
//! Artifact layout under the output directory:
//! - `manifest.json`       config + seed + code version
//! - `model_initial.json`  stage-I checkpoint
//! - `detection.json`      stage-II scores, flagged indices and stats
//! - `distances.csv`       stage-III matrix (written by the distances stage)
//! - `model_extended.json` stage-IV checkpoint after fine-tuning
//! - `metrics.json`, `scatter.csv`, `confusion.csv` evaluation outputs
//! - `model_baseline.json`, `baseline_metrics.json` baseline outputs

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{AcceptanceThresholds, ExperimentConfig};
use crate::distances::{load_distance_csv, write_distance_csv, DistanceMatrix};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::{load_model, save_model, FeedforwardClassifier};
use crate::ood::OodDetection;
use crate::pipeline::{
    detection_stats, distance_stage, evaluate, extend_and_finetune, kmeans_baseline, prepare_data,
    run_ood_stage, train_initial, DetectionStats, ExperimentData, MetricsReport,
};
use crate::report::{
    export_scatter, write_confusion_csv, write_manifest, write_metrics_json, write_scatter_csv,
};

/// Pipeline stages in execution order; `run` can stop after any of them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Train,
    Detect,
    Distances,
    Extend,
    Evaluate,
}

impl Stage {
    pub fn parse(name: &str) -> Result<Stage> {
        match name {
            "train" => Ok(Stage::Train),
            "detect" => Ok(Stage::Detect),
            "distances" => Ok(Stage::Distances),
            "extend" => Ok(Stage::Extend),
            "evaluate" => Ok(Stage::Evaluate),
            other => Err(Error::Config(format!(
                "unknown stage '{other}' (expected train, detect, distances, extend or evaluate)"
            ))),
        }
    }
}

pub struct Artifacts {
    dir: PathBuf,
}

impl Artifacts {
    pub fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Artifacts { dir: dir.to_path_buf() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn load_model_file(&self, name: &str) -> Result<FeedforwardClassifier> {
        let path = self.path(name);
        if !path.exists() {
            return Err(Error::Usage(format!(
                "missing artifact {}; run the earlier stages first",
                path.display()
            )));
        }
        load_model(&path)
    }

    fn load_detection(&self) -> Result<OodDetection> {
        let path = self.path("detection.json");
        if !path.exists() {
            return Err(Error::Usage(format!(
                "missing artifact {}; run the detect stage first",
                path.display()
            )));
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let artifact: DetectionArtifact = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("cannot parse detection artifact: {e}")))?;
        Ok(artifact.detection)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct DetectionArtifact {
    detection: OodDetection,
    stats: Option<DetectionStats>,
}

fn write_detection(
    artifacts: &Artifacts,
    detection: &OodDetection,
    stats: Option<DetectionStats>,
) -> Result<()> {
    let artifact = DetectionArtifact {
        detection: detection.clone(),
        stats,
    };
    let mut s = serde_json::to_string_pretty(&artifact).expect("detection serialization");
    s.push('\n');
    let path = artifacts.path("detection.json");
    fs::write(&path, s).map_err(|e| Error::io(&path, e))
}

/// Runs stages I..=`stop_after` in memory, persisting every produced
/// artifact. Returns the metrics report when evaluation ran.
pub fn run_experiment(
    config: &ExperimentConfig,
    out_dir: &Path,
    stop_after: Stage,
) -> Result<Option<MetricsReport>> {
    config.validate()?;
    let artifacts = Artifacts::new(out_dir)?;
    write_manifest(config, &artifacts.path("manifest.json"))?;
    let data = prepare_data(config)?;

    let model = train_initial(config, &data)?;
    save_model(&model, &artifacts.path("model_initial.json"))?;
    if stop_after == Stage::Train {
        return Ok(None);
    }

    let detection = run_ood_stage(&model, &data, config)?;
    let stats = detection_stats(&detection.ood_indices, &data.novel_truth);
    write_detection(&artifacts, &detection, Some(stats))?;
    if stop_after == Stage::Detect {
        return Ok(None);
    }

    let (ood_samples, distances) = distance_stage(&data, &detection, config)?;
    if stop_after == Stage::Distances {
        write_distance_csv(&distances, &artifacts.path("distances.csv"))?;
        return Ok(None);
    }

    let tuned = extend_and_finetune(&model, &data, &ood_samples, &distances, config)?;
    save_model(&tuned, &artifacts.path("model_extended.json"))?;
    if stop_after == Stage::Extend {
        return Ok(None);
    }

    let report = evaluate_stage(config, &data, &tuned, &detection, &artifacts, "")?;
    Ok(Some(report))
}

fn evaluate_stage(
    config: &ExperimentConfig,
    data: &ExperimentData,
    tuned: &FeedforwardClassifier,
    detection: &OodDetection,
    artifacts: &Artifacts,
    prefix: &str,
) -> Result<MetricsReport> {
    let mut report = evaluate(tuned, &data.eval, data.q, config.extension.k)?;
    report.detection = Some(detection_stats(&detection.ood_indices, &data.novel_truth));
    write_metrics_json(&report, &artifacts.path(&format!("{prefix}metrics.json")))?;
    let rows = export_scatter(tuned, &data.eval, Some(detection))?;
    write_scatter_csv(&rows, &artifacts.path(&format!("{prefix}scatter.csv")))?;
    write_confusion_csv(&report, &artifacts.path(&format!("{prefix}confusion.csv")))?;
    Ok(report)
}

/// Runs one stage in isolation, loading its inputs from earlier stages'
/// artifacts in `out_dir`.
pub fn run_single_stage(
    config: &ExperimentConfig,
    out_dir: &Path,
    stage: Stage,
) -> Result<Option<MetricsReport>> {
    config.validate()?;
    let artifacts = Artifacts::new(out_dir)?;
    match stage {
        Stage::Train => {
            write_manifest(config, &artifacts.path("manifest.json"))?;
            let data = prepare_data(config)?;
            let model = train_initial(config, &data)?;
            save_model(&model, &artifacts.path("model_initial.json"))?;
            Ok(None)
        }
        Stage::Detect => {
            let data = prepare_data(config)?;
            let model = artifacts.load_model_file("model_initial.json")?;
            let detection = run_ood_stage(&model, &data, config)?;
            let stats = detection_stats(&detection.ood_indices, &data.novel_truth);
            write_detection(&artifacts, &detection, Some(stats))?;
            Ok(None)
        }
        Stage::Distances => {
            let data = prepare_data(config)?;
            let detection = artifacts.load_detection()?;
            let (_, distances) = distance_stage(&data, &detection, config)?;
            write_distance_csv(&distances, &artifacts.path("distances.csv"))?;
            Ok(None)
        }
        Stage::Extend => {
            let data = prepare_data(config)?;
            let model = artifacts.load_model_file("model_initial.json")?;
            let detection = artifacts.load_detection()?;
            let (ood_samples, distances) =
                stage_distances(config, &data, &detection, &artifacts)?;
            let tuned = extend_and_finetune(&model, &data, &ood_samples, &distances, config)?;
            save_model(&tuned, &artifacts.path("model_extended.json"))?;
            Ok(None)
        }
        Stage::Evaluate => {
            let data = prepare_data(config)?;
            let tuned = artifacts.load_model_file("model_extended.json")?;
            let detection = artifacts.load_detection()?;
            let report = evaluate_stage(config, &data, &tuned, &detection, &artifacts, "")?;
            Ok(Some(report))
        }
    }
}

/// Uses `distances.csv` when an earlier `distances` stage wrote it, otherwise
/// recomputes per the config.
fn stage_distances(
    config: &ExperimentConfig,
    data: &ExperimentData,
    detection: &OodDetection,
    artifacts: &Artifacts,
) -> Result<(Matrix, DistanceMatrix)> {
    let csv = artifacts.path("distances.csv");
    if csv.exists() {
        let ood_samples = data.eval.samples.select_rows(&detection.ood_indices)?;
        let distances = load_distance_csv(&csv)?;
        if distances.n() != ood_samples.rows() {
            return Err(Error::Consistency(format!(
                "distances.csv covers {} samples but {} were detected",
                distances.n(),
                ood_samples.rows()
            )));
        }
        Ok((ood_samples, distances))
    } else {
        distance_stage(data, detection, config)
    }
}

/// Full pipeline with the k-means baseline replacing stage IV.
pub fn run_baseline(config: &ExperimentConfig, out_dir: &Path) -> Result<MetricsReport> {
    config.validate()?;
    let artifacts = Artifacts::new(out_dir)?;
    write_manifest(config, &artifacts.path("manifest.json"))?;
    let data = prepare_data(config)?;

    let initial = artifacts.path("model_initial.json");
    let model = if initial.exists() {
        load_model(&initial)?
    } else {
        let model = train_initial(config, &data)?;
        save_model(&model, &initial)?;
        model
    };
    let detection = run_ood_stage(&model, &data, config)?;
    let (ood_samples, _) = distance_stage(&data, &detection, config)?;
    let tuned = kmeans_baseline(&model, &data.train, &ood_samples, config)?;
    save_model(&tuned, &artifacts.path("model_baseline.json"))?;
    evaluate_stage(config, &data, &tuned, &detection, &artifacts, "baseline_")
}

/// One failed acceptance threshold: which bound and the observed value.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdFailure {
    pub name: String,
    pub bound: f64,
    pub observed: f64,
}

/// Checks a metrics report against the config's `[acceptance]` section.
pub fn check_acceptance(
    report: &MetricsReport,
    thresholds: &AcceptanceThresholds,
) -> Vec<ThresholdFailure> {
    let mut failures = Vec::new();
    let detection = report.detection;
    let mut check_min = |name: &str, bound: Option<f64>, observed: Option<f64>| {
        if let (Some(bound), Some(observed)) = (bound, observed) {
            if observed < bound {
                failures.push(ThresholdFailure {
                    name: name.into(),
                    bound,
                    observed,
                });
            }
        }
    };
    check_min(
        "min_detection_recall",
        thresholds.min_detection_recall,
        detection.map(|d| d.recall),
    );
    check_min(
        "min_novel_assignment_rate",
        thresholds.min_novel_assignment_rate,
        Some(report.novel_assignment_rate),
    );
    check_min(
        "min_cluster_purity",
        thresholds.min_cluster_purity,
        Some(report.cluster_purity),
    );
    check_min("min_acc_known", thresholds.min_acc_known, Some(report.acc_known));
    check_min("min_acc_novel", thresholds.min_acc_novel, Some(report.acc_novel));
    if let (Some(bound), Some(stats)) = (thresholds.max_detection_fpr, detection) {
        if stats.false_positive_rate > bound {
            failures.push(ThresholdFailure {
                name: "max_detection_fpr".into(),
                bound,
                observed: stats.false_positive_rate,
            });
        }
    }
    failures
}
