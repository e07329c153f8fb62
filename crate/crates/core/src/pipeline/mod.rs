//! The four-stage experiment: entropy-maximization training, OoD detection,
//! distance construction, and extension plus fine-tuning, with the k-means
//! baseline and the oracle ablations.

pub mod assignment;
pub mod evaluate;
pub mod kmeans;

pub use assignment::{map_clusters, ClusterMapping};
pub use evaluate::{detection_stats, evaluate, DetectionStats, MetricsReport};
pub use kmeans::{inertia, kmeans};

use crate::config::{DatasetKind, DistanceSource, ExperimentConfig, OodSource};
use crate::data::synthetic::{even_counts, generate_blobs_counts, generate_two_moons};
use crate::data::{idx, split_by_class, subsample, LabeledDataset, SplitSpec};
use crate::distances::{load_distance_csv, oracle_distance, pairwise_euclidean, DistanceMatrix};
use crate::error::{Error, Result};
use crate::losses::{
    cross_entropy, cross_entropy_grad, entropy_max_objective_grads, softmax_rows,
    total_objective_grads,
};
use crate::matrix::Matrix;
use crate::nn::{FeedforwardClassifier, Gradients, Optimizer, TrainableMask};
use crate::ood::{detect_ood, mixup_ood, sample_uniform_noise, OodDetection};
use crate::seeded::{derive_seed, rng_from_seed, shuffle_indices};

pub const KMEANS_MAX_ITERS: usize = 300;

/// Prepared splits in the canonical label space: train labels `0..q`, eval
/// labels `0..q+m` with novel classes mapped to `q..q+m`.
#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub train: LabeledDataset,
    pub eval: LabeledDataset,
    pub q: usize,
    pub num_novel: usize,
    /// Per eval row: true when the sample belongs to a novel class.
    pub novel_truth: Vec<bool>,
}

impl ExperimentData {
    /// Unlabeled view of the evaluation samples (what the detector sees).
    pub fn test(&self) -> LabeledDataset {
        self.eval.strip_labels()
    }
}

/// Builds datasets deterministically from the config and seed.
pub fn prepare_data(config: &ExperimentConfig) -> Result<ExperimentData> {
    config.validate()?;
    let seed = config.seed;
    match config.dataset.kind {
        DatasetKind::TwoMoons => {
            let ds = &config.dataset;
            let train =
                generate_two_moons(ds.train_samples(), ds.noise(), derive_seed(seed, "train-data"))?;
            let test =
                generate_two_moons(ds.test_samples(), ds.noise(), derive_seed(seed, "test-data"))?;
            let centers = ds.novel_centers();
            let counts = even_counts(ds.novel_samples(), centers.len());
            let blobs = generate_blobs_counts(
                &centers,
                ds.novel_std(),
                &counts,
                derive_seed(seed, "novel-data"),
            )?;
            let q = 2;
            let mut eval = test;
            let mut shifted = blobs;
            if let Some(l) = shifted.labels.as_mut() {
                for v in l.iter_mut() {
                    *v += q;
                }
            }
            eval = eval.concat(&shifted)?;
            let labels = eval.labels()?.to_vec();
            let novel_truth = labels.iter().map(|&l| l >= q).collect();
            Ok(ExperimentData {
                train,
                eval,
                q,
                num_novel: centers.len(),
                novel_truth,
            })
        }
        DatasetKind::Idx => {
            let ds = &config.dataset;
            let full_train = idx::load_idx(
                ds.train_images.as_deref().expect("validated"),
                ds.train_labels.as_deref().expect("validated"),
            )?;
            let held_out = ds.held_out_classes.clone().expect("validated");
            let split = split_by_class(
                &full_train,
                &SplitSpec {
                    held_out_classes: held_out.clone(),
                    seed,
                },
            )?;
            let mut train = split.train;
            if let Some(cap) = ds.max_train_samples {
                train = subsample(&train, cap, derive_seed(seed, "subsample"))?;
            }
            let q = split.kept_classes.len();

            let mut held_sorted = held_out;
            held_sorted.sort_unstable();
            held_sorted.dedup();

            let test = idx::load_idx(
                ds.test_images.as_deref().expect("validated"),
                ds.test_labels.as_deref().expect("validated"),
            )?;
            let mut eval_labels = Vec::with_capacity(test.len());
            for &orig in test.labels()? {
                if let Some(pos) = split.kept_classes.iter().position(|&c| c == orig) {
                    eval_labels.push(pos);
                } else if let Some(pos) = held_sorted.iter().position(|&c| c == orig) {
                    eval_labels.push(q + pos);
                } else {
                    return Err(Error::Argument(format!(
                        "test label {orig} occurs in neither the kept nor the held-out classes"
                    )));
                }
            }
            let novel_truth = eval_labels.iter().map(|&l| l >= q).collect();
            let eval = LabeledDataset::new(test.samples, Some(eval_labels))?;
            Ok(ExperimentData {
                train,
                eval,
                q,
                num_novel: held_sorted.len(),
                novel_truth,
            })
        }
    }
}

fn add_gradients(into: &mut Gradients, other: &Gradients) {
    for (a, b) in into.layers.iter_mut().zip(&other.layers) {
        for (x, y) in a.weights.data_mut().iter_mut().zip(b.weights.data()) {
            *x += y;
        }
        for (x, y) in a.biases.iter_mut().zip(&b.biases) {
            *x += y;
        }
    }
}

/// Cycling chunk iterator over a shuffled index pool.
struct PoolCycle {
    order: Vec<usize>,
    cursor: usize,
}

impl PoolCycle {
    fn new(n: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Self {
        PoolCycle {
            order: shuffle_indices(n, rng),
            cursor: 0,
        }
    }

    fn next_chunk(&mut self, size: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        if self.order.is_empty() {
            return out;
        }
        for _ in 0..size {
            out.push(self.order[self.cursor]);
            self.cursor = (self.cursor + 1) % self.order.len();
        }
        out
    }
}

/// Stage I: trains the initial classifier on the known classes with the
/// entropy-maximization objective against generated known-unknowns.
pub fn train_initial(
    config: &ExperimentConfig,
    data: &ExperimentData,
) -> Result<FeedforwardClassifier> {
    config.validate()?;
    let train = &data.train;
    let labels = train.labels()?.to_vec();
    let spec = &config.initial_training;

    let mut model = FeedforwardClassifier::mlp(
        train.samples.cols(),
        &config.model.hidden,
        data.q,
        derive_seed(config.seed, "init-model"),
    )?;
    let mask = TrainableMask::all_trainable(&model);
    let mut optimizer = Optimizer::new(spec.optimizer)?;

    let uniform_pool = match spec.ood_source {
        OodSource::Uniform => {
            let dim = train.samples.cols();
            let low = spec.uniform_low.clone().unwrap_or_else(|| vec![-4.0; dim]);
            let high = spec.uniform_high.clone().unwrap_or_else(|| vec![4.0; dim]);
            if low.len() != dim || high.len() != dim {
                return Err(Error::Config(format!(
                    "uniform bounds have dimension {} but the data has {dim}",
                    low.len()
                )));
            }
            Some(sample_uniform_noise(
                spec.ood_samples.unwrap_or(100),
                &low,
                &high,
                derive_seed(config.seed, "noise"),
            )?)
        }
        OodSource::Mixup => None,
    };

    let mut shuffle_rng = rng_from_seed(derive_seed(config.seed, "train-shuffle"));
    let mut pool_rng = rng_from_seed(derive_seed(config.seed, "ood-order"));
    let n = train.len();
    let batch = spec.batch_size.min(n);

    for epoch in 0..spec.epochs {
        let ood_pool: Matrix = match spec.ood_source {
            OodSource::Uniform => uniform_pool.clone().expect("uniform pool"),
            OodSource::Mixup => {
                let count = spec.ood_samples.unwrap_or(spec.batch_size);
                mixup_ood(
                    train,
                    count,
                    derive_seed(config.seed, &format!("mixup-{epoch}")),
                )?
            }
        };
        let ood_batch = spec
            .ood_batch_size
            .unwrap_or(spec.batch_size)
            .min(ood_pool.rows());
        let order = shuffle_indices(n, &mut shuffle_rng);
        let mut ood_cycle = PoolCycle::new(ood_pool.rows(), &mut pool_rng);

        for step_indices in order.chunks(batch) {
            let in_batch = train.samples.select_rows(step_indices)?;
            let in_labels: Vec<usize> = step_indices.iter().map(|&i| labels[i]).collect();
            let ood_indices = ood_cycle.next_chunk(ood_batch);
            let ood_batch_m = ood_pool.select_rows(&ood_indices)?;

            let (in_logits, in_cache) = model.forward(&in_batch)?;
            let in_probs = softmax_rows(&in_logits)?;
            let (ood_probs, ood_cache) = if ood_batch_m.rows() > 0 {
                let (logits, cache) = model.forward(&ood_batch_m)?;
                (softmax_rows(&logits)?, Some(cache))
            } else {
                (Matrix::zeros(0, data.q), None)
            };

            let (_, g_in, g_ood) =
                entropy_max_objective_grads(&in_probs, &in_labels, &ood_probs, config.losses.lambda_em)?;
            let mut grads = model.backward(&in_cache, &g_in, &mask)?;
            if let Some(cache) = &ood_cache {
                let g = model.backward(cache, &g_ood, &mask)?;
                add_gradients(&mut grads, &g);
            }
            optimizer.step(&mut model, &grads, &mask)?;
        }
    }
    Ok(model)
}

/// Stage II: flags OoD samples in the test data by entropy thresholding, or
/// from ground truth under the oracle-detection ablation.
pub fn run_ood_stage(
    model: &FeedforwardClassifier,
    data: &ExperimentData,
    config: &ExperimentConfig,
) -> Result<OodDetection> {
    let detection = detect_ood(model, &data.eval, config.detection.tau)?;
    if config.ablation.oracle_detection {
        let truth: Vec<usize> = data
            .novel_truth
            .iter()
            .enumerate()
            .filter(|(_, &novel)| novel)
            .map(|(i, _)| i)
            .collect();
        Ok(detection.with_indices(truth))
    } else {
        Ok(detection)
    }
}

/// Stage III: gathers the detected samples and builds their distance matrix
/// per the configured source (or the 0/1 oracle under the ablation).
pub fn distance_stage(
    data: &ExperimentData,
    detection: &OodDetection,
    config: &ExperimentConfig,
) -> Result<(Matrix, DistanceMatrix)> {
    let ood_samples = data.eval.samples.select_rows(&detection.ood_indices)?;
    let d = if config.ablation.oracle_distance {
        let labels = data.eval.labels()?;
        let detected: Vec<usize> = detection
            .ood_indices
            .iter()
            .map(|&i| labels[i])
            .collect();
        oracle_distance(&detected)?
    } else {
        match config.distance.source {
            DistanceSource::Euclidean => pairwise_euclidean(&ood_samples),
            DistanceSource::Precomputed => {
                let path = config
                    .distance
                    .precomputed_path
                    .as_deref()
                    .ok_or_else(|| Error::Config("distance.precomputed_path missing".into()))?;
                let d = load_distance_csv(path)?;
                if d.n() != ood_samples.rows() {
                    return Err(Error::Consistency(format!(
                        "precomputed matrix covers {} samples but {} were detected",
                        d.n(),
                        ood_samples.rows()
                    )));
                }
                d
            }
        }
    };
    Ok((ood_samples, d))
}

/// Stage IV: extends the initial model by `k` empty classes and returns the
/// pair (extended-but-untrained, fine-tuned) so callers can compare.
pub fn extend_and_finetune(
    model: &FeedforwardClassifier,
    data: &ExperimentData,
    ood_samples: &Matrix,
    distances: &DistanceMatrix,
    config: &ExperimentConfig,
) -> Result<FeedforwardClassifier> {
    let scale = config
        .extension
        .init_scale
        .unwrap_or_else(|| model.default_extension_scale());
    let extended = model.extend_output_layer(
        config.extension.k,
        scale,
        derive_seed(config.seed, "extend"),
    )?;
    finetune_extended(&extended, &data.train, ood_samples, distances, config)
}

/// Fine-tunes an already extended model on replay plus OoD batches by
/// minimizing the three-term objective with a frozen encoder. Each batch is
/// half in-distribution replay, half OoD; the cluster term covers all OoD
/// pairs inside the batch.
pub fn finetune_extended(
    model: &FeedforwardClassifier,
    train: &LabeledDataset,
    ood_samples: &Matrix,
    distances: &DistanceMatrix,
    config: &ExperimentConfig,
) -> Result<FeedforwardClassifier> {
    let labels = train.labels()?.to_vec();
    let q = labels.iter().copied().max().map_or(0, |m| m + 1);
    let k = config.extension.k;
    if model.num_classes() != q + k {
        return Err(Error::Usage(format!(
            "fine-tuning needs a model extended to {} outputs, found {}",
            q + k,
            model.num_classes()
        )));
    }
    if distances.n() != ood_samples.rows() {
        return Err(Error::Consistency(format!(
            "distance matrix covers {} samples but the OoD set has {}",
            distances.n(),
            ood_samples.rows()
        )));
    }

    let mut tuned = model.clone();
    let mask = tuned.freeze_encoder()?;
    let spec = &config.finetune;
    let mut optimizer = Optimizer::new(spec.optimizer)?;

    let n = train.len();
    let half = (spec.batch_size / 2).max(1).min(n);
    let ood_half = (spec.batch_size - half).min(ood_samples.rows());
    let mut shuffle_rng = rng_from_seed(derive_seed(config.seed, "finetune-shuffle"));
    let mut pool_rng = rng_from_seed(derive_seed(config.seed, "finetune-ood-order"));

    for _ in 0..spec.epochs {
        let order = shuffle_indices(n, &mut shuffle_rng);
        let mut ood_cycle = PoolCycle::new(ood_samples.rows(), &mut pool_rng);
        for step_indices in order.chunks(half) {
            let replay = train.samples.select_rows(step_indices)?;
            let replay_labels: Vec<usize> = step_indices.iter().map(|&i| labels[i]).collect();
            let ood_ids = ood_cycle.next_chunk(ood_half);
            let ood_batch = ood_samples.select_rows(&ood_ids)?;

            let (in_logits, in_cache) = tuned.forward(&replay)?;
            let in_probs = softmax_rows(&in_logits)?;
            let (ood_probs, ood_cache) = if ood_batch.rows() > 0 {
                let (logits, cache) = tuned.forward(&ood_batch)?;
                (softmax_rows(&logits)?, Some(cache))
            } else {
                (Matrix::zeros(0, q + k), None)
            };

            let (_, g_in, g_ood) = total_objective_grads(
                &in_probs,
                &replay_labels,
                &ood_probs,
                &ood_ids,
                distances,
                &config.losses,
                q,
            )?;
            let mut grads = tuned.backward(&in_cache, &g_in, &mask)?;
            if let Some(cache) = &ood_cache {
                let g = tuned.backward(cache, &g_ood, &mask)?;
                add_gradients(&mut grads, &g);
            }
            optimizer.step(&mut tuned, &grads, &mask)?;
        }
    }
    Ok(tuned)
}

/// Baseline: pseudo-labels the OoD set with k-means on the same
/// representation the distance matrix uses, then fine-tunes the extended
/// model with plain cross-entropy over replay and pseudo-labeled batches
/// (frozen encoder, replay included).
pub fn kmeans_baseline(
    model: &FeedforwardClassifier,
    train: &LabeledDataset,
    ood_samples: &Matrix,
    config: &ExperimentConfig,
) -> Result<FeedforwardClassifier> {
    let labels = train.labels()?.to_vec();
    let q = labels.iter().copied().max().map_or(0, |m| m + 1);
    let k = config.extension.k;
    let scale = config
        .extension
        .init_scale
        .unwrap_or_else(|| model.default_extension_scale());
    let mut tuned =
        model.extend_output_layer(k, scale, derive_seed(config.seed, "extend"))?;

    let pseudo: Vec<usize> = if ood_samples.rows() == 0 {
        Vec::new()
    } else {
        let clusters = k.min(ood_samples.rows());
        let (_, assignment) = kmeans(
            ood_samples,
            clusters,
            KMEANS_MAX_ITERS,
            derive_seed(config.seed, "kmeans"),
        )?;
        assignment.iter().map(|&c| q + c).collect()
    };

    let mask = tuned.freeze_encoder()?;
    let spec = &config.finetune;
    let mut optimizer = Optimizer::new(spec.optimizer)?;
    let n = train.len();
    let half = (spec.batch_size / 2).max(1).min(n);
    let ood_half = (spec.batch_size - half).min(ood_samples.rows());
    let mut shuffle_rng = rng_from_seed(derive_seed(config.seed, "baseline-shuffle"));
    let mut pool_rng = rng_from_seed(derive_seed(config.seed, "baseline-ood-order"));

    for _ in 0..spec.epochs {
        let order = shuffle_indices(n, &mut shuffle_rng);
        let mut ood_cycle = PoolCycle::new(ood_samples.rows(), &mut pool_rng);
        for step_indices in order.chunks(half) {
            let ood_ids = ood_cycle.next_chunk(ood_half);
            let mut batch = train.samples.select_rows(step_indices)?;
            let mut batch_labels: Vec<usize> =
                step_indices.iter().map(|&i| labels[i]).collect();
            if !ood_ids.is_empty() {
                batch = batch.vstack(&ood_samples.select_rows(&ood_ids)?)?;
                batch_labels.extend(ood_ids.iter().map(|&i| pseudo[i]));
            }

            let (logits, cache) = tuned.forward(&batch)?;
            let probs = softmax_rows(&logits)?;
            let m = batch.rows() as f64;
            let mut dlogits = Matrix::zeros(logits.rows(), logits.cols());
            for (r, &label) in batch_labels.iter().enumerate() {
                let _ = cross_entropy(probs.row(r), label)?;
                let g = cross_entropy_grad(probs.row(r), label)?;
                let row = dlogits.row_mut(r);
                for (c, gc) in g.iter().enumerate() {
                    row[c] = gc / m;
                }
            }
            let grads = tuned.backward(&cache, &dlogits, &mask)?;
            optimizer.step(&mut tuned, &grads, &mask)?;
        }
    }
    Ok(tuned)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::tests_support::small_two_moons_config;

    #[test]
    fn prepared_two_moons_data_matches_the_protocol() {
        let config = small_two_moons_config(7);
        let data = prepare_data(&config).unwrap();
        assert_eq!(data.q, 2);
        assert_eq!(data.num_novel, 3);
        assert_eq!(data.train.len(), config.dataset.train_samples());
        assert_eq!(
            data.eval.len(),
            config.dataset.test_samples() + config.dataset.novel_samples()
        );
        let novel = data.novel_truth.iter().filter(|&&n| n).count();
        assert_eq!(novel, config.dataset.novel_samples());
        // Deterministic regeneration.
        let again = prepare_data(&config).unwrap();
        assert_eq!(data.train, again.train);
        assert_eq!(data.eval, again.eval);
    }

    #[test]
    fn lambda_em_one_reduces_to_plain_ce_training() {
        // With lambda_em = 1 the OoD term has weight zero, so training with
        // or without the noise pool gives bit-identical parameters.
        let mut config = small_two_moons_config(3);
        config.losses.lambda_em = 1.0;
        config.initial_training.epochs = 3;
        let data = prepare_data(&config).unwrap();
        let with_noise = train_initial(&config, &data).unwrap();

        let mut no_noise = config.clone();
        no_noise.initial_training.ood_samples = Some(0);
        let without = train_initial(&no_noise, &data).unwrap();
        assert_eq!(with_noise.parameter_vector(), without.parameter_vector());
    }

    #[test]
    fn oracle_detection_flags_exactly_the_novel_samples() {
        let mut config = small_two_moons_config(5);
        config.ablation.oracle_detection = true;
        config.initial_training.epochs = 1;
        let data = prepare_data(&config).unwrap();
        let model = train_initial(&config, &data).unwrap();
        let detection = run_ood_stage(&model, &data, &config).unwrap();
        let expected: Vec<usize> = data
            .novel_truth
            .iter()
            .enumerate()
            .filter(|(_, &n)| n)
            .map(|(i, _)| i)
            .collect();
        assert_eq!(detection.ood_indices, expected);
        let stats = detection_stats(&detection.ood_indices, &data.novel_truth);
        assert_eq!(stats.recall, 1.0);
        assert_eq!(stats.false_positive_rate, 0.0);
    }

    #[test]
    fn finetune_rejects_an_unextended_model() {
        let config = small_two_moons_config(5);
        let data = prepare_data(&config).unwrap();
        let model = FeedforwardClassifier::mlp(2, &[8], 2, 0).unwrap();
        let ood = Matrix::zeros(0, 2);
        let d = DistanceMatrix::from_condensed(0, vec![]).unwrap();
        assert!(matches!(
            finetune_extended(&model, &data.train, &ood, &d, &config),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn finetune_keeps_encoder_bit_identical() {
        let mut config = small_two_moons_config(9);
        config.initial_training.epochs = 2;
        config.finetune.epochs = 2;
        let data = prepare_data(&config).unwrap();
        let model = train_initial(&config, &data).unwrap();
        let detection = run_ood_stage(&model, &data, &config).unwrap();
        let (ood_samples, d) = distance_stage(&data, &detection, &config).unwrap();
        let extended = model
            .extend_output_layer(config.extension.k, 0.1, 1)
            .unwrap();
        let tuned =
            finetune_extended(&extended, &data.train, &ood_samples, &d, &config).unwrap();
        for l in 0..extended.num_layers() - 1 {
            assert_eq!(
                extended.layers()[l].weights().data(),
                tuned.layers()[l].weights().data(),
                "encoder layer {l} moved"
            );
            assert_eq!(extended.layers()[l].biases(), tuned.layers()[l].biases());
        }
        // Head moved.
        assert_ne!(
            extended.layers().last().unwrap().weights().data(),
            tuned.layers().last().unwrap().weights().data()
        );
    }
}
