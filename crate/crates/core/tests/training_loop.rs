//! Training-loop behaviour on small synthetic data: checkpoint cadence,
//! loss trend on a separable problem, bit-level run-to-run determinism,
//! and the Jensen property of checkpoint weight averaging.

use nlvc_core::checkpoint::{average_checkpoints, encode, Checkpoint, TensorData};
use nlvc_core::model::{build_model, ModelConfig, ModelFamily};
use nlvc_core::train::{train, AdamParams, LabeledVideo, TrainConfig};
use nlvc_core::{ParamStore, SeededRng, Tensor};

fn separable_two_class_set(videos: usize, seed: u64) -> Vec<LabeledVideo> {
    let mut rng = SeededRng::new(seed);
    let (dv, da) = (6, 4);
    let protos: Vec<(Vec<f32>, Vec<f32>)> = (0..2)
        .map(|_| {
            (
                (0..dv).map(|_| rng.normal_f32() * 2.0).collect(),
                (0..da).map(|_| rng.normal_f32() * 2.0).collect(),
            )
        })
        .collect();
    (0..videos)
        .map(|i| {
            let class = i % 2;
            let frames = 3 + rng.index(3);
            let noisy = |proto: &[f32], rng: &mut SeededRng| {
                let mut data = Vec::new();
                for _ in 0..frames {
                    for &p in proto {
                        data.push(p + 0.1 * rng.normal_f32());
                    }
                }
                data
            };
            let visual = noisy(&protos[class].0, &mut rng);
            let audio = noisy(&protos[class].1, &mut rng);
            LabeledVideo::new(
                format!("v{i:04}"),
                Tensor::from_vec(&[frames, dv], visual).unwrap(),
                Tensor::from_vec(&[frames, da], audio).unwrap(),
                vec![class],
            )
            .unwrap()
        })
        .collect()
}

fn tiny_model(seed: u64) -> nlvc_core::VideoModel {
    let cfg = ModelConfig {
        family: ModelFamily::SoftBof4k,
        classes: 2,
        visual_dim: 6,
        audio_dim: 4,
        visual_clusters: 4,
        audio_clusters: 2,
        hidden: 8,
        experts: 2,
        gru_hidden: 4,
        gru_layers: 1,
    };
    build_model(&cfg, &mut SeededRng::new(seed)).unwrap()
}

#[test]
fn zero_steps_returns_only_the_initial_checkpoint() {
    let data = separable_two_class_set(8, 1);
    let mut model = tiny_model(2);
    let before = model.params.clone();
    let outcome = train(
        &mut model,
        &data,
        &TrainConfig {
            steps: 0,
            batch_size: 4,
            frames: 5,
            seed: 3,
            checkpoint_every: 10,
            adam: AdamParams::default(),
        },
    )
    .unwrap();
    assert_eq!(outcome.checkpoints.len(), 1);
    assert_eq!(outcome.checkpoints[0].step, 0);
    assert!(outcome.losses.is_empty());
    for ((_, a), (_, b)) in before.iter().zip(model.params.iter()) {
        assert_eq!(a.data(), b.data());
    }
}

#[test]
fn loss_decreases_on_separable_data() {
    let data = separable_two_class_set(40, 4);
    let mut model = tiny_model(5);
    let outcome = train(
        &mut model,
        &data,
        &TrainConfig {
            steps: 200,
            batch_size: 8,
            frames: 5,
            seed: 6,
            checkpoint_every: 0,
            adam: AdamParams {
                lr: 3e-3,
                ..AdamParams::default()
            },
        },
    )
    .unwrap();
    assert_eq!(outcome.losses.len(), 200);
    let first: f64 = outcome.losses[..10].iter().sum::<f64>() / 10.0;
    let last: f64 = outcome.losses[190..].iter().sum::<f64>() / 10.0;
    assert!(
        last < first,
        "loss should trend down: first ten {first}, last ten {last}"
    );
    assert!(outcome.losses[199] < outcome.losses[0]);
}

#[test]
fn fixed_seed_reproduces_the_checkpoint_sequence_bit_for_bit() {
    let data = separable_two_class_set(16, 7);
    let cfg = TrainConfig {
        steps: 25,
        batch_size: 4,
        frames: 4,
        seed: 8,
        checkpoint_every: 10,
        adam: AdamParams::default(),
    };
    let run = |model_seed: u64| {
        let mut model = tiny_model(model_seed);
        train(&mut model, &data, &cfg).unwrap()
    };
    let a = run(9);
    let b = run(9);
    assert_eq!(a.checkpoints.len(), b.checkpoints.len());
    for (x, y) in a.checkpoints.iter().zip(&b.checkpoints) {
        assert_eq!(encode(x), encode(y), "checkpoint bytes must match");
    }
    assert_eq!(a.losses, b.losses);
}

#[test]
fn checkpoint_cadence_includes_initial_and_final() {
    let data = separable_two_class_set(8, 10);
    let mut model = tiny_model(11);
    let outcome = train(
        &mut model,
        &data,
        &TrainConfig {
            steps: 10,
            batch_size: 4,
            frames: 4,
            seed: 12,
            checkpoint_every: 4,
            adam: AdamParams::default(),
        },
    )
    .unwrap();
    let steps: Vec<u64> = outcome.checkpoints.iter().map(|c| c.step).collect();
    assert_eq!(steps, vec![0, 4, 8, 10]);
}

#[test]
fn averaged_weights_beat_mean_loss_on_a_quadratic() {
    // loss(w) = 0.5 * sum((w - target)^2) is convex, so the loss of the
    // averaged checkpoint never exceeds the mean of the individual losses.
    for seed in 0..20u64 {
        let mut rng = SeededRng::new(1000 + seed);
        let target: Vec<f32> = (0..12).map(|_| rng.normal_f32()).collect();
        let loss = |ck: &Checkpoint| -> f64 {
            let TensorData::F32(w) = &ck.entries[0].data else {
                panic!("f32 checkpoint expected")
            };
            w.iter()
                .zip(&target)
                .map(|(&wi, &ti)| 0.5 * ((wi - ti) as f64).powi(2))
                .sum()
        };
        let checkpoints: Vec<Checkpoint> = (0..5)
            .map(|_| {
                let mut store = ParamStore::new();
                store
                    .insert("w", Tensor::from_fn(&[12], |_| rng.normal_f32()))
                    .unwrap();
                Checkpoint::from_store(&store, 0)
            })
            .collect();
        let avg = average_checkpoints(&checkpoints).unwrap();
        let mean_loss: f64 =
            checkpoints.iter().map(loss).sum::<f64>() / checkpoints.len() as f64;
        assert!(
            loss(&avg) <= mean_loss + 1e-12,
            "seed {seed}: Jensen violated ({} > {mean_loss})",
            loss(&avg)
        );
    }
}
