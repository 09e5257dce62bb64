use liegconv::data::{load_dataset, synth_oriented_bars, Dataset, Provenance, TransformKind};
use liegconv::kernelnet::SirenConfig;
use liegconv::lie::GroupTag;
use liegconv::model::{
    build_model, evaluate, load_store, read_container, save_store, train, GCNNConfig, LrSchedule, Model, SamplingMode,
    TrainConfig,
};
use liegconv::selftest::rot90;
use liegconv::tensor::{Padding, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small(n_rotations: usize) -> GCNNConfig {
    GCNNConfig {
        n_rotations,
        channels: [3, 3, 4],
        stencil: 3,
        siren: SirenConfig {
            hidden: vec![8],
            omega0: 3.0,
            ..SirenConfig::default()
        },
        head_hidden: 8,
        classes: 4,
        seed: 7,
        ..GCNNConfig::default()
    }
}

fn toy_set(n: usize, side: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Dataset::new(
        Tensor::uniform(&[n, 1, side, side], 0.0, 1.0, &mut rng),
        (0..n).map(|i| i % 4).collect(),
        Provenance {
            transform: TransformKind::Identity,
            seed,
            split: "toy".into(),
        },
    )
    .unwrap()
}

fn weights(m: &Model) -> Vec<Tensor> {
    m.store.trainable_ids().map(|id| m.store.get(id).clone()).collect()
}

fn quick_train(epochs: usize, lr: f64) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 4,
        lr,
        weight_decay: 0.0,
        schedule: LrSchedule::Constant,
        eval_every: 0,
        bn_recalibration: 0,
        seed: 3,
    }
}

#[test]
fn mnist_subset_loads_with_all_digits() {
    let root = concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/");
    let ds = load_dataset(
        format!("{root}mnist5k-images-idx3-ubyte.gz"),
        format!("{root}mnist5k-labels-idx1-ubyte.gz"),
    )
    .unwrap();
    assert_eq!(ds.images.shape(), &[5000, 1, 28, 28]);
    let mut seen = [false; 10];
    for &l in &ds.labels {
        seen[l] = true;
    }
    assert!(seen.iter().all(|&s| s));
    assert!(ds.images.data().iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn c4_model_logits_are_invariant_to_quarter_turns() {
    for padding in [Padding::Zero, Padding::Circular] {
        let model = build_model(&GCNNConfig { padding, ..small(4) }).unwrap();
        let images = toy_set(3, 8, 1).images;
        let grids = model.uniform_grids().unwrap();
        let base = model.logits(&images, &grids).unwrap();
        let mut turned = images;
        for _ in 0..3 {
            turned = rot90(&turned);
            let l = model.logits(&turned, &grids).unwrap();
            let gap = l.data().iter().zip(base.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(gap < 1e-6, "{padding:?}: {gap}");
        }
    }
}

#[test]
fn parameter_count_does_not_depend_on_group_resolution() {
    let counts: Vec<usize> = [1, 2, 4, 8].iter().map(|&n| build_model(&small(n)).unwrap().num_parameters()).collect();
    assert!(counts.windows(2).all(|w| w[0] == w[1]), "{counts:?}");
}

#[test]
fn zero_learning_rate_leaves_weights_unchanged() {
    let mut model = build_model(&small(2)).unwrap();
    let before = weights(&model);
    train(&mut model, &quick_train(1, 0.0), &toy_set(8, 8, 2), None, |_| {}).unwrap();
    assert_eq!(weights(&model), before);
}

#[test]
fn training_is_deterministic_in_discretize_mode() {
    let run = || {
        let mut model = build_model(&small(2)).unwrap();
        let h = train(&mut model, &quick_train(2, 1e-2), &toy_set(8, 8, 2), None, |_| {}).unwrap();
        (weights(&model), h.iter().map(|m| m.train_loss).collect::<Vec<_>>())
    };
    assert_eq!(run(), run());
}

#[test]
fn random_sampling_is_deterministic_given_the_seed() {
    let cfg = GCNNConfig {
        sampling: SamplingMode::Random,
        ..small(4)
    };
    let run = || {
        let mut model = build_model(&cfg).unwrap();
        train(&mut model, &quick_train(1, 1e-2), &toy_set(8, 8, 2), None, |_| {}).unwrap();
        weights(&model)
    };
    assert_eq!(run(), run());
}

#[test]
fn overfits_eight_samples() {
    let ds = toy_set(8, 8, 4);
    let mut model = build_model(&small(4)).unwrap();
    let cfg = TrainConfig {
        batch_size: 8,
        bn_recalibration: 8,
        ..quick_train(60, 1e-2)
    };
    let history = train(&mut model, &cfg, &ds, None, |_| {}).unwrap();
    assert!(history.last().unwrap().train_loss < history[0].train_loss);
    assert_eq!(evaluate(&model, &ds).unwrap(), 1.0);
}

#[test]
fn checkpoint_round_trip_reproduces_logits() {
    let mut model = build_model(&small(2)).unwrap();
    train(&mut model, &quick_train(1, 1e-2), &toy_set(8, 8, 2), None, |_| {}).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let mut meta = std::collections::BTreeMap::new();
    meta.insert("n_rotations".to_string(), "2".to_string());
    save_store(&path, &model.store, &meta).unwrap();

    let container = read_container(&path).unwrap();
    assert_eq!(container.config, meta);
    let mut fresh = build_model(&GCNNConfig { seed: 99, ..small(2) }).unwrap();
    load_store(&mut fresh.store, &container).unwrap();
    let images = toy_set(2, 8, 5).images;
    let grids = model.uniform_grids().unwrap();
    assert_eq!(model.logits(&images, &grids).unwrap(), fresh.logits(&images, &grids).unwrap());
}

#[test]
fn random_sampling_over_scale_needs_the_override() {
    let cfg = GCNNConfig {
        group: GroupTag::R2xRplus,
        n_rotations: 1,
        n_scales: 3,
        sampling: SamplingMode::Random,
        ..small(1)
    };
    assert!(build_model(&cfg).is_err());
    assert!(build_model(&GCNNConfig {
        allow_noncompact: true,
        ..cfg
    })
    .is_ok());
}

#[test]
fn bars_have_four_balanced_classes() {
    let ds = synth_oriented_bars(40, 3);
    let mut counts = [0; 4];
    for &l in &ds.labels {
        counts[l] += 1;
    }
    assert_eq!(counts, [10; 4]);
}
