mod common;

use std::sync::Arc;

use cbgt_net::env::{load_mnist, Environment, PatchStreamEnv, Reseed, Split, SyntheticEvidenceEnv};
use cbgt_net::eval::evaluate;
use cbgt_net::models::{Encoder, EncoderConfig, ModelKind, OutputActivation};
use cbgt_net::train::{train, train_cbgt, train_lstm_baseline, train_single_patch, TrainConfig, TrainLog};
use common::mnist_subset;

fn small(kind: ModelKind, batch: usize, val: usize, budget: u64) -> TrainConfig {
    let mut cfg = TrainConfig::new(kind);
    cfg.batch_size = batch;
    cfg.val_episodes = val;
    cfg.val_every = 1;
    cfg.budget_episodes = budget;
    cfg.stop_at_convergence = false;
    cfg.seed = 3;
    cfg
}

fn mlp(env: &impl Environment, hidden: Vec<usize>, seed: u64) -> Encoder<f64> {
    Encoder::new(EncoderConfig::mlp(env.observation_shape(), hidden, env.num_categories()), seed).unwrap()
}

fn linear_mlp(env: &impl Environment, hidden: Vec<usize>, seed: u64) -> Encoder<f64> {
    let mut cfg = EncoderConfig::mlp(env.observation_shape(), hidden, env.num_categories());
    cfg.output = OutputActivation::Linear;
    Encoder::new(cfg, seed).unwrap()
}

fn synthetic(eta: f64) -> (SyntheticEvidenceEnv, SyntheticEvidenceEnv) {
    let env = SyntheticEvidenceEnv::new(4, eta, 10).unwrap();
    let val = env.reseeded(11);
    (env, val)
}

fn mnist_envs(patch: usize) -> (PatchStreamEnv, PatchStreamEnv) {
    let train = Arc::new(load_mnist(&mnist_subset(), Split::Train).unwrap());
    let test = Arc::new(load_mnist(&mnist_subset(), Split::Test).unwrap());
    (PatchStreamEnv::new(train, patch, 1).unwrap(), PatchStreamEnv::new(test, patch, 2).unwrap())
}

#[test]
fn noiseless_synthetic_task_is_learned_perfectly() {
    let (mut env, val) = synthetic(0.0);
    let mut cfg = small(ModelKind::Cbgt { tau: 1.0, max_steps: 100 }, 32, 128, 32 * 1500);
    cfg.adam.lr = 1e-2;
    let out = train_cbgt(&cfg, &mut env, &val, mlp(&val, vec![], 4)).unwrap();
    assert_eq!(out.log.rows.last().unwrap().val_accuracy, 1.0);

    // evidence concentrates on the observed symbol
    for c in 0..4 {
        let mut obs = cbgt_net::numerics::Tensor::zeros(&[1, 4, 1]);
        obs.data_mut()[c] = 1.0;
        let e = out.model.encoder.encode(&obs).unwrap();
        assert!(e.values()[c] > 0.9, "symbol {c}: {:?}", e.values());
    }
}

#[test]
fn lstm_learns_the_noiseless_task() {
    let (mut env, val) = synthetic(0.0);
    let cfg = small(ModelKind::Lstm { seq_len: 3 }, 32, 128, 32 * 1500);
    let out = train_lstm_baseline(&cfg, &mut env, &val, mlp(&val, vec![], 4)).unwrap();
    let report = evaluate(&out.model, &mut val.reseeded(99), 1024).unwrap();
    assert_eq!(report.accuracy, 1.0);
    assert_eq!(report.avg_decision_time, 3.0);
}

#[test]
fn one_step_lstm_matches_single_patch_within_noise() {
    let (mut env, val) = synthetic(0.4);
    let enc = mlp(&env, vec![8], 6);
    let lstm = train_lstm_baseline(&small(ModelKind::Lstm { seq_len: 1 }, 32, 64, 32 * 1500), &mut env.clone(), &val, enc.clone()).unwrap();
    let single = train_single_patch(&small(ModelKind::SinglePatch, 32, 64, 32 * 1500), &mut env, &val, enc).unwrap();
    let a = evaluate(&lstm.model, &mut val.reseeded(5), 2048).unwrap().accuracy;
    let b = evaluate(&single.model, &mut val.reseeded(5), 2048).unwrap().accuracy;
    // both sit at the Bayes rate 1 − η = 0.6; 2048 episodes give σ ≈ 0.011
    assert!((a - b).abs() < 0.05, "lstm {a} vs single {b}");
}

#[test]
fn fixed_seed_reproduces_the_log_and_parameters() {
    for kind in [ModelKind::Cbgt { tau: 2.0, max_steps: 100 }, ModelKind::Lstm { seq_len: 2 }] {
        let run = || {
            let (mut env, val) = synthetic(0.3);
            let enc = mlp(&env, vec![6], 1);
            train(&small(kind, 16, 32, 16 * 40), &mut env, &val, enc, |_| {}).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.log.to_csv().unwrap(), b.log.to_csv().unwrap());
        assert_eq!(a.model.flat_values(), b.model.flat_values());
    }
}

#[test]
fn zero_threshold_training_reproduces_linear_head_single_patch_training() {
    let run = |kind| {
        let (mut env, val) = synthetic(0.3);
        let enc = linear_mlp(&env, vec![6], 2);
        train(&small(kind, 16, 32, 16 * 30), &mut env, &val, enc, |_| {}).unwrap()
    };
    let cbgt = run(ModelKind::Cbgt { tau: 0.0, max_steps: 100 });
    let single = run(ModelKind::SinglePatch);
    assert_eq!(cbgt.log, single.log);
    assert_eq!(cbgt.model.encoder.params().flat_values(), single.model.encoder.params().flat_values());
}

#[test]
fn log_file_replays_to_the_same_convergence_point() {
    let (mut env, val) = synthetic(0.0);
    let mut cfg = small(ModelKind::Cbgt { tau: 1.0, max_steps: 100 }, 16, 32, 16 * 2000);
    cfg.stop_at_convergence = true;
    let out = train_cbgt(&cfg, &mut env, &val, mlp(&val, vec![], 0)).unwrap();
    assert!(out.log.episodes_to_convergence.is_some());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("log.csv");
    out.log.write_csv(&path).unwrap();
    assert_eq!(TrainLog::read_csv(&path).unwrap(), out.log);
}

#[test]
fn single_class_training_predicts_that_class_everywhere() {
    let train_set = load_mnist(&mnist_subset(), Split::Train).unwrap();
    let only_three = train_set.filtered(|label| label == 3);
    let test_set = Arc::new(load_mnist(&mnist_subset(), Split::Test).unwrap());
    let prevalence = test_set.labels().iter().filter(|&&l| l == 3).count() as f64 / test_set.len() as f64;

    let mut env = PatchStreamEnv::new(Arc::new(only_three), 16, 0).unwrap();
    let val = PatchStreamEnv::new(Arc::clone(&test_set), 16, 1).unwrap();
    let cfg = small(ModelKind::SinglePatch, 32, 32, 32 * 30);
    let enc = Encoder::<f32>::lenet5(10, 0).unwrap();
    let out = train_single_patch(&cfg, &mut env, &val, enc).unwrap();

    let mut eval_env = PatchStreamEnv::new(test_set, 16, 5).unwrap();
    let report = evaluate(&out.model, &mut eval_env, 2000).unwrap();
    assert!(report.rows.iter().all(|r| r.prediction == 3));
    let target_share = report.rows.iter().filter(|r| r.target == 3).count() as f64 / 2000.0;
    assert_eq!(report.accuracy, target_share);
    assert!((target_share - prevalence).abs() < 0.03);
}

#[test]
fn mnist_loss_falls_over_the_first_ten_batches() {
    let (mut env, val) = mnist_envs(16);
    let mut cfg = small(ModelKind::Cbgt { tau: 2.0, max_steps: 100 }, 64, 16, 64 * 10);
    cfg.val_every = 1;
    let enc = Encoder::<f32>::lenet5(10, 7).unwrap();
    let out = train_cbgt(&cfg, &mut env, &val, enc).unwrap();
    let losses: Vec<f64> = out.log.rows.iter().map(|r| r.mean_loss).collect();
    assert_eq!(losses.len(), 10);
    assert!(losses[9] < losses[0], "{losses:?}");
}

#[test]
fn full_image_patches_give_an_ordinary_classifier() {
    let (mut env, val) = mnist_envs(28);
    let mut cfg = small(ModelKind::SinglePatch, 64, 256, 64 * 400);
    cfg.val_every = 400;
    let enc = Encoder::<f32>::lenet5(10, 1).unwrap();
    let out = train_single_patch(&cfg, &mut env, &val, enc).unwrap();
    let report = evaluate(&out.model, &mut val.reseeded(3), 2000).unwrap();
    assert!(report.accuracy > 0.9, "accuracy {}", report.accuracy);
}

#[test]
fn mismatched_environment_is_rejected() {
    let (mut env, val) = synthetic(0.0);
    let other = SyntheticEvidenceEnv::new(5, 0.0, 0).unwrap();
    let cfg = small(ModelKind::SinglePatch, 4, 4, 16);
    assert!(train(&cfg, &mut env, &val, mlp(&other, vec![], 0), |_| {}).is_err());
}
