//! Pipeline-level integration tests beyond the acceptance gate: the replay
//! guarantee, the pure-replay control, and an IDX-backed run on a small
//! synthetic image corpus exercising the mixup/holdout path end to end.

use std::path::Path;

use emptyclasses::config::parse_config_str;
use emptyclasses::data::idx::{IMAGES_MAGIC, LABELS_MAGIC};
use emptyclasses::losses::argmax;
use emptyclasses::pipeline::{
    distance_stage, evaluate, extend_and_finetune, prepare_data, run_ood_stage, train_initial,
    ExperimentData,
};
use emptyclasses::seeded::rng_from_seed;

const SMALL_TWO_MOONS: &str = r#"
seed = 3

[dataset]
kind = "two_moons"
train_samples = 300
test_samples = 200
novel_samples = 150

[model]
hidden = [32, 32, 32]

[losses]
lambda1 = 0.45
lambda2 = 0.45
lambda3 = 0.1
alpha = 5.0

[initial_training]
epochs = 80
batch_size = 64
ood_source = "uniform"
ood_samples = 100
ood_batch_size = 64

[initial_training.optimizer]
kind = "adam"
learning_rate = 1e-2

[detection]
tau = 0.8

[extension]
k = 3

[finetune]
epochs = 50
batch_size = 64

[finetune.optimizer]
kind = "adam"
learning_rate = 1e-2
"#;

fn known_accuracy(
    model: &emptyclasses::nn::FeedforwardClassifier,
    data: &ExperimentData,
) -> f64 {
    let logits = model.logits(&data.eval.samples).unwrap();
    let labels = data.eval.labels().unwrap();
    let mut total = 0;
    let mut hits = 0;
    for (r, &label) in labels.iter().enumerate() {
        if label < data.q {
            total += 1;
            if argmax(logits.row(r)) == label {
                hits += 1;
            }
        }
    }
    hits as f64 / total as f64
}

#[test]
fn initial_training_fits_in_distribution_and_raises_ood_entropy() {
    let config = parse_config_str(SMALL_TWO_MOONS).unwrap();
    let data = prepare_data(&config).unwrap();
    let model = train_initial(&config, &data).unwrap();

    // In-distribution training accuracy.
    let logits = model.logits(&data.train.samples).unwrap();
    let labels = data.train.labels().unwrap();
    let hits = (0..data.train.len())
        .filter(|&r| argmax(logits.row(r)) == labels[r])
        .count();
    let train_acc = hits as f64 / data.train.len() as f64;
    assert!(train_acc >= 0.95, "training accuracy {train_acc}");

    // Entropy maximization: mean score on held-out noise exceeds the mean
    // on in-distribution test samples.
    let noise = emptyclasses::ood::sample_uniform_noise(200, &[-4.0, -4.0], &[4.0, 4.0], 999)
        .unwrap();
    let mean_entropy = |samples: &emptyclasses::Matrix| {
        let logits = model.logits(samples).unwrap();
        (0..samples.rows())
            .map(|r| {
                emptyclasses::losses::entropy_score(
                    &emptyclasses::losses::softmax(logits.row(r)).unwrap(),
                )
            })
            .sum::<f64>()
            / samples.rows() as f64
    };
    let in_dist: Vec<usize> = (0..data.eval.len()).filter(|&i| !data.novel_truth[i]).collect();
    let in_dist_samples = data.eval.samples.select_rows(&in_dist).unwrap();
    assert!(
        mean_entropy(&noise) > mean_entropy(&in_dist_samples),
        "noise entropy {} vs in-dist {}",
        mean_entropy(&noise),
        mean_entropy(&in_dist_samples)
    );
}

#[test]
fn frozen_and_unfrozen_finetunes_diverge_only_where_expected() {
    let config = parse_config_str(SMALL_TWO_MOONS).unwrap();
    let data = prepare_data(&config).unwrap();
    let model = train_initial(&config, &data).unwrap();
    let detection = run_ood_stage(&model, &data, &config).unwrap();
    let (ood_samples, distances) = distance_stage(&data, &detection, &config).unwrap();
    let extended = model.extend_output_layer(config.extension.k, 0.1, 7).unwrap();

    // Frozen run (the pipeline default).
    let frozen =
        extend_and_finetune(&model, &data, &ood_samples, &distances, &config).unwrap();
    // Unfrozen control: same schedule, all parameters trainable.
    let unfrozen = {
        use emptyclasses::losses::{softmax_rows, total_objective_grads};
        use emptyclasses::nn::{Optimizer, TrainableMask};
        use emptyclasses::seeded::{derive_seed, rng_from_seed, shuffle_indices};

        let mut tuned = extended.clone();
        let mask = TrainableMask::all_trainable(&tuned);
        let mut optimizer = Optimizer::new(config.finetune.optimizer).unwrap();
        let labels = data.train.labels().unwrap().to_vec();
        let half = config.finetune.batch_size / 2;
        let mut shuffle_rng = rng_from_seed(derive_seed(config.seed, "finetune-shuffle"));
        let mut pool_rng = rng_from_seed(derive_seed(config.seed, "finetune-ood-order"));
        for _ in 0..config.finetune.epochs {
            let order = shuffle_indices(data.train.len(), &mut shuffle_rng);
            let mut pool = shuffle_indices(ood_samples.rows(), &mut pool_rng);
            let mut cursor = 0usize;
            for step in order.chunks(half) {
                let replay = data.train.samples.select_rows(step).unwrap();
                let replay_labels: Vec<usize> = step.iter().map(|&i| labels[i]).collect();
                let mut ids = Vec::new();
                for _ in 0..half.min(pool.len()) {
                    ids.push(pool[cursor % pool.len()]);
                    cursor += 1;
                }
                let _ = &mut pool;
                let ood = ood_samples.select_rows(&ids).unwrap();
                let (in_logits, in_cache) = tuned.forward(&replay).unwrap();
                let (ood_logits, ood_cache) = tuned.forward(&ood).unwrap();
                let (_, g_in, g_ood) = total_objective_grads(
                    &softmax_rows(&in_logits).unwrap(),
                    &replay_labels,
                    &softmax_rows(&ood_logits).unwrap(),
                    &ids,
                    &distances,
                    &config.losses,
                    data.q,
                )
                .unwrap();
                let mut grads = tuned.backward(&in_cache, &g_in, &mask).unwrap();
                let g2 = tuned.backward(&ood_cache, &g_ood, &mask).unwrap();
                for (a, b) in grads.layers.iter_mut().zip(&g2.layers) {
                    for (x, y) in a.weights.data_mut().iter_mut().zip(b.weights.data()) {
                        *x += y;
                    }
                    for (x, y) in a.biases.iter_mut().zip(&b.biases) {
                        *x += y;
                    }
                }
                optimizer.step(&mut tuned, &grads, &mask).unwrap();
            }
        }
        tuned
    };

    // Encoder: bit-identical in the frozen run, moved in the unfrozen one.
    for l in 0..extended.num_layers() - 1 {
        assert_eq!(
            extended.layers()[l].weights().data(),
            frozen.layers()[l].weights().data()
        );
    }
    assert!((0..extended.num_layers() - 1).any(|l| {
        extended.layers()[l].weights().data() != unfrozen.layers()[l].weights().data()
    }));
    // Final-layer trajectories differ between the two regimes.
    assert_ne!(
        frozen.layers().last().unwrap().weights().data(),
        unfrozen.layers().last().unwrap().weights().data()
    );
}

#[test]
fn replay_guarantee_and_pure_replay_control() {
    let config = parse_config_str(SMALL_TWO_MOONS).unwrap();
    let data = prepare_data(&config).unwrap();
    let model = train_initial(&config, &data).unwrap();
    let pre_extension_acc = known_accuracy(&model, &data);

    let detection = run_ood_stage(&model, &data, &config).unwrap();
    let (ood_samples, distances) = distance_stage(&data, &detection, &config).unwrap();

    // Full objective: known-class accuracy may dip by at most 3pp.
    let tuned = extend_and_finetune(&model, &data, &ood_samples, &distances, &config).unwrap();
    let report = evaluate(&tuned, &data.eval, data.q, config.extension.k).unwrap();
    assert!(
        report.acc_known >= pre_extension_acc - 0.03,
        "known accuracy fell from {pre_extension_acc} to {}",
        report.acc_known
    );

    // Pure replay (lambda2 = lambda3 = 0): at most 1pp.
    let mut replay_only = config.clone();
    replay_only.losses.lambda2 = 0.0;
    replay_only.losses.lambda3 = 0.0;
    let tuned =
        extend_and_finetune(&model, &data, &ood_samples, &distances, &replay_only).unwrap();
    let report = evaluate(&tuned, &data.eval, data.q, replay_only.extension.k).unwrap();
    assert!(
        report.acc_known >= pre_extension_acc - 0.01,
        "pure replay dropped known accuracy from {pre_extension_acc} to {}",
        report.acc_known
    );
}

#[test]
fn pipeline_survives_an_empty_detection_set() {
    // tau = 1.0 flags nothing; fine-tuning degenerates to replay-only and the
    // baseline skips pseudo-labeling.
    let mut config = parse_config_str(SMALL_TWO_MOONS).unwrap();
    config.detection.tau = 1.0;
    config.initial_training.epochs = 10;
    config.finetune.epochs = 5;
    let data = prepare_data(&config).unwrap();
    let model = train_initial(&config, &data).unwrap();
    let detection = run_ood_stage(&model, &data, &config).unwrap();
    assert!(detection.ood_indices.is_empty());
    let (ood_samples, distances) = distance_stage(&data, &detection, &config).unwrap();
    assert_eq!(ood_samples.rows(), 0);
    let tuned = extend_and_finetune(&model, &data, &ood_samples, &distances, &config).unwrap();
    let report = evaluate(&tuned, &data.eval, data.q, config.extension.k).unwrap();
    // No OoD pressure: nothing reaches the empty classes.
    assert_eq!(report.novel_assignment_rate, 0.0);
    let baseline =
        emptyclasses::pipeline::kmeans_baseline(&model, &data.train, &ood_samples, &config)
            .unwrap();
    let base_report = evaluate(&baseline, &data.eval, data.q, config.extension.k).unwrap();
    assert!(base_report.acc_known > 0.5);
}

// ---------------------------------------------------------------------------
// Synthetic IDX corpus: 6x6 images, each class a bright blob in a distinct
// position, digits 0..4 with classes {1, 3} held out as novel.
// ---------------------------------------------------------------------------

fn write_synthetic_idx(dir: &Path, name: &str, n_per_class: usize, seed: u64) {
    let classes = 5usize;
    let side = 6usize;
    let mut rng = rng_from_seed(seed);
    let mut images: Vec<u8> = Vec::new();
    let mut labels: Vec<u8> = Vec::new();
    // Class c lights a 2x2 block anchored at a class-specific position.
    let anchors = [(0usize, 0usize), (0, 4), (4, 0), (4, 4), (2, 2)];
    for (c, &(r0, c0)) in anchors.iter().enumerate().take(classes) {
        for _ in 0..n_per_class {
            let mut img = vec![0u8; side * side];
            for v in img.iter_mut() {
                *v = rand::Rng::gen_range(&mut rng, 0..30u8);
            }
            for dr in 0..2 {
                for dc in 0..2 {
                    img[(r0 + dr) * side + (c0 + dc)] =
                        200 + rand::Rng::gen_range(&mut rng, 0..56u8);
                }
            }
            images.extend_from_slice(&img);
            labels.push(c as u8);
        }
    }

    let count = (classes * n_per_class) as u32;
    let mut img_bytes = Vec::new();
    img_bytes.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    img_bytes.extend_from_slice(&count.to_be_bytes());
    img_bytes.extend_from_slice(&(side as u32).to_be_bytes());
    img_bytes.extend_from_slice(&(side as u32).to_be_bytes());
    img_bytes.extend_from_slice(&images);
    std::fs::write(dir.join(format!("{name}-images")), img_bytes).unwrap();

    let mut lbl_bytes = Vec::new();
    lbl_bytes.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    lbl_bytes.extend_from_slice(&count.to_be_bytes());
    lbl_bytes.extend_from_slice(&labels);
    std::fs::write(dir.join(format!("{name}-labels")), lbl_bytes).unwrap();
}

#[test]
fn idx_pipeline_discovers_held_out_classes() {
    let dir = tempfile::tempdir().unwrap();
    write_synthetic_idx(dir.path(), "train", 80, 11);
    write_synthetic_idx(dir.path(), "test", 30, 22);

    let config_text = format!(
        r#"
name = "synthetic-idx"
seed = 5

[dataset]
kind = "idx"
train_images = "{base}/train-images"
train_labels = "{base}/train-labels"
test_images = "{base}/test-images"
test_labels = "{base}/test-labels"
held_out_classes = [1, 3]

[model]
hidden = [32, 16]

[losses]
lambda1 = 0.45
lambda2 = 0.45
lambda3 = 0.1
alpha = 5.0

[initial_training]
epochs = 40
batch_size = 60
ood_source = "mixup"
ood_samples = 60
ood_batch_size = 30

[initial_training.optimizer]
kind = "adam"
learning_rate = 1e-2

[detection]
tau = 0.5

[extension]
k = 2

[finetune]
epochs = 40
batch_size = 60

[finetune.optimizer]
kind = "adam"
learning_rate = 1e-2
"#,
        base = dir.path().display()
    );
    let config = parse_config_str(&config_text).unwrap();
    let data = prepare_data(&config).unwrap();
    assert_eq!(data.q, 3);
    assert_eq!(data.num_novel, 2);
    assert_eq!(data.train.num_classes().unwrap(), 3);

    let model = train_initial(&config, &data).unwrap();
    let detection = run_ood_stage(&model, &data, &config).unwrap();
    let (ood_samples, distances) = distance_stage(&data, &detection, &config).unwrap();
    let tuned = extend_and_finetune(&model, &data, &ood_samples, &distances, &config).unwrap();
    let report = evaluate(&tuned, &data.eval, data.q, config.extension.k).unwrap();

    // The synthetic classes are trivially separable; the pipeline should
    // recover both held-out classes nearly perfectly.
    assert!(report.acc_known >= 0.95, "known {}", report.acc_known);
    assert!(report.acc_novel >= 0.90, "novel {}", report.acc_novel);
    assert!(report.mapping.complete);
}
