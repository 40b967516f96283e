//! Training for CBGT models and the two baselines.
//!
//! Every model is trained the same way: batches of episodes, mean
//! cross-entropy at the decision step, Adam, and a validation pass every
//! `val_every` batches that feeds the [`ConvergenceDetector`].

mod convergence;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use convergence::{update_convergence, ConvergenceDetector, NRMSD_THRESHOLD, SMOOTHING, WINDOW};

use crate::cbgt::{run_batch_on_tape, StreamResult, Threshold};
use crate::env::{Environment, Episode, Reseed};
use crate::error::{Error, Result};
use crate::eval::{aggregate, predict_episodes};
use crate::models::{to_nchw, Encoder, Mode, Model, ModelKind, OutputActivation};
use crate::numerics::{cross_entropy, AdamConfig, AdamState, Gradients, Scalar, Tape, Var, LOG_FLOOR};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelKind,
    pub adam: AdamConfig,
    /// Episodes per optimizer step.
    pub batch_size: usize,
    /// Validation episodes, regenerated from `val_seed` every time.
    pub val_episodes: usize,
    pub val_seed: u64,
    /// Batches between validation points.
    pub val_every: usize,
    /// Training stops once this many episodes have been seen.
    pub budget_episodes: u64,
    /// Stop as soon as the detector reports convergence.
    pub stop_at_convergence: bool,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(model: ModelKind) -> Self {
        Self {
            model,
            adam: AdamConfig::default(),
            batch_size: 512,
            val_episodes: 1024,
            val_seed: 0x7661_6c69_6461_7465,
            val_every: 2,
            budget_episodes: 2_000_000,
            stop_at_convergence: true,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |field: &str, message: String| Error::Config {
            field: field.into(),
            message,
        };
        if !(self.adam.lr > 0.0 && self.adam.lr.is_finite()) {
            return Err(cfg("lr", format!("must be positive, got {}", self.adam.lr)));
        }
        if self.batch_size == 0 {
            return Err(cfg("batch_size", "must be at least 1".into()));
        }
        if self.val_episodes == 0 {
            return Err(cfg("val_episodes", "must be at least 1".into()));
        }
        if self.val_every == 0 {
            return Err(cfg("val_every", "must be at least 1".into()));
        }
        match self.model {
            ModelKind::Cbgt { tau, max_steps } => {
                Threshold::new(tau).map_err(|e| cfg("tau", e.to_string()))?;
                if max_steps == 0 {
                    return Err(cfg("max_steps", "must be at least 1".into()));
                }
            }
            ModelKind::Lstm { seq_len: 0 } => {
                return Err(cfg("seq_len", "must be at least 1".into()));
            }
            _ => {}
        }
        Ok(())
    }
}

/// One validation point of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    /// Optimizer steps taken so far.
    pub step: u64,
    pub episodes_seen: u64,
    /// Mean batch loss since the previous validation point.
    pub mean_loss: f64,
    pub val_accuracy: f64,
    pub smoothed_val_accuracy: f64,
    /// Empty until the detector window is full.
    pub nrmsd: Option<f64>,
    pub avg_decision_time: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
    /// `episodes_seen` at the first validation point that converged.
    pub episodes_to_convergence: Option<u64>,
}

pub const LOG_HEADER: [&str; 7] = [
    "step",
    "episodes_seen",
    "mean_loss",
    "val_accuracy",
    "smoothed_val_accuracy",
    "nrmsd",
    "avg_decision_time",
];

impl TrainLog {
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(LOG_HEADER)?;
        for r in &self.rows {
            w.write_record([
                r.step.to_string(),
                r.episodes_seen.to_string(),
                r.mean_loss.to_string(),
                r.val_accuracy.to_string(),
                r.smoothed_val_accuracy.to_string(),
                r.nrmsd.map(|v| v.to_string()).unwrap_or_default(),
                r.avg_decision_time.to_string(),
            ])?;
        }
        w.into_inner().map_err(|e| Error::Internal(e.to_string()))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let bytes = self.to_csv()?;
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    /// Reads a log and recovers its convergence point by replaying the
    /// validation accuracies through a fresh detector.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)?;
        let mut rows = Vec::new();
        for rec in reader.records() {
            let rec = rec?;
            let offset = rec.position().map_or(0, |p| p.byte());
            let bad = |name: &str| Error::Format {
                file: path.to_path_buf(),
                offset,
                message: format!("bad {name} field"),
            };
            let get = |i: usize| rec.get(i).unwrap_or("");
            let num = |i: usize| get(i).parse::<f64>().map_err(|_| bad(LOG_HEADER[i]));
            rows.push(LogRow {
                step: get(0).parse().map_err(|_| bad("step"))?,
                episodes_seen: get(1).parse().map_err(|_| bad("episodes_seen"))?,
                mean_loss: num(2)?,
                val_accuracy: num(3)?,
                smoothed_val_accuracy: num(4)?,
                nrmsd: if get(5).is_empty() { None } else { Some(num(5)?) },
                avg_decision_time: num(6)?,
            });
        }
        let mut det = ConvergenceDetector::default();
        let mut episodes_to_convergence = None;
        for r in &rows {
            if det.update(r.val_accuracy)? && episodes_to_convergence.is_none() {
                episodes_to_convergence = Some(r.episodes_seen);
            }
        }
        Ok(Self {
            rows,
            episodes_to_convergence,
        })
    }
}

/// Cross-entropy of a finished episode's output against its target.
pub fn loss_at_decision(result: &StreamResult) -> Result<f64> {
    cross_entropy(&result.output, result.target)
}

/// Backpropagates the decision-time loss through every encoder application
/// recorded on `tape`. The accumulator is a plain sum, so each step's
/// encoder output receives the gradient of the final accumulator row.
pub fn backward_through_stream<T: Scalar>(tape: &Tape<T>, loss: Var) -> Result<Gradients<T>> {
    tape.backward(loss)
}

/// Records the mean decision-time loss of a batch on `tape`.
///
/// `mode` controls batch-norm statistics in the encoder.
pub fn batch_loss<T: Scalar, E: Environment>(
    model: &mut Model<T>,
    tape: &mut Tape<T>,
    env: &E,
    episodes: &mut [Episode],
    mode: Mode,
) -> Result<Var> {
    let targets: Vec<usize> = episodes.iter().map(|e| e.target).collect();
    let shape = env.observation_shape();
    let k = model.encoder.num_categories();
    let encoder = &mut model.encoder;
    let probs = match model.kind {
        ModelKind::Cbgt { tau, max_steps } => {
            let encode = |t: &mut Tape<T>, x: Var| encoder.forward_mode(t, x, mode);
            run_batch_on_tape(tape, encode, k, Threshold::new(tau)?, env, episodes, 0, max_steps)?.probs
        }
        ModelKind::SinglePatch => {
            let obs: Vec<_> = episodes.iter_mut().map(|e| env.next_observation::<T>(e)).collect();
            let x = tape.constant(to_nchw(&obs.iter().collect::<Vec<_>>(), shape)?);
            let y = encoder.forward_mode(tape, x, mode)?;
            as_probabilities(tape, encoder, y)?
        }
        ModelKind::Lstm { seq_len } => {
            let mut steps = Vec::with_capacity(seq_len);
            for _ in 0..seq_len {
                let obs: Vec<_> = episodes.iter_mut().map(|e| env.next_observation::<T>(e)).collect();
                let x = tape.constant(to_nchw(&obs.iter().collect::<Vec<_>>(), shape)?);
                steps.push(encoder.forward_mode(tape, x, mode)?);
            }
            let lstm = model
                .lstm
                .as_ref()
                .ok_or_else(|| Error::Internal("LSTM model without its head".into()))?;
            lstm.forward(tape, &steps)?
        }
    };
    tape.cross_entropy(probs, &targets, LOG_FLOOR)
}

/// Softmax heads already give probabilities; other heads are read out through
/// a softmax, which for linear heads is exactly a one-step accumulator.
fn as_probabilities<T: Scalar>(tape: &mut Tape<T>, encoder: &Encoder<T>, y: Var) -> Result<Var> {
    match encoder.config().output {
        OutputActivation::Softmax => Ok(y),
        _ => tape.softmax(y),
    }
}

/// A trained model with its log.
#[derive(Debug, Clone)]
pub struct Trained<T: Scalar> {
    pub model: Model<T>,
    pub log: TrainLog,
}

/// Trains `encoder` (plus an LSTM head for that baseline) as described by
/// `config`, validating on episodes from `val_env` reseeded with
/// `config.val_seed`. `on_row` sees every log row as it is produced.
pub fn train<T: Scalar, E: Environment + Reseed>(
    config: &TrainConfig,
    env: &mut E,
    val_env: &E,
    encoder: Encoder<T>,
    mut on_row: impl FnMut(&LogRow),
) -> Result<Trained<T>> {
    config.validate()?;
    if env.observation_shape() != encoder.config().input {
        return Err(Error::invalid(format!(
            "environment emits {:?} but the encoder expects {:?}",
            env.observation_shape(),
            encoder.config().input
        )));
    }
    if env.num_categories() != encoder.num_categories() {
        return Err(Error::invalid(format!(
            "environment has {} categories, encoder {}",
            env.num_categories(),
            encoder.num_categories()
        )));
    }
    let mut model = Model::new(config.model, encoder, config.seed)?;
    let mut enc_opt = AdamState::new(model.encoder.params(), config.adam);
    let mut lstm_opt = model.lstm.as_ref().map(|l| AdamState::new(l.params(), config.adam));
    let mut detector = ConvergenceDetector::default();
    let mut log = TrainLog::default();
    let mut step = 0u64;
    let mut seen = 0u64;
    let mut loss_sum = 0.0;
    let mut loss_batches = 0usize;

    while seen < config.budget_episodes {
        let mut episodes = (0..config.batch_size)
            .map(|_| env.start_episode())
            .collect::<Result<Vec<_>>>()?;
        let mut tape = Tape::new();
        let loss = batch_loss(&mut model, &mut tape, env, &mut episodes, Mode::Train)?;
        let loss_value = tape.value(loss).data()[0].to_f64().unwrap_or(f64::NAN);
        if !loss_value.is_finite() {
            return Err(Error::Diverged(format!(
                "mean loss became {loss_value} at step {} after {seen} episodes",
                step + 1
            )));
        }
        let grads = backward_through_stream(&tape, loss)?;
        drop(tape);
        let store = model.encoder.params_mut();
        store.zero_grads();
        grads.accumulate_into(store);
        enc_opt.step(store)?;
        if let (Some(l), Some(opt)) = (model.lstm.as_mut(), lstm_opt.as_mut()) {
            let store = l.params_mut();
            store.zero_grads();
            grads.accumulate_into(store);
            opt.step(store)?;
        }
        step += 1;
        seen += config.batch_size as u64;
        loss_sum += loss_value;
        loss_batches += 1;

        if step.is_multiple_of(config.val_every as u64) {
            let rows = predict_episodes(&model, &mut val_env.reseeded(config.val_seed), config.val_episodes)?;
            let (acc, avg_t) = aggregate(&rows);
            let converged = detector.update(acc)?;
            let row = LogRow {
                step,
                episodes_seen: seen,
                mean_loss: loss_sum / loss_batches as f64,
                val_accuracy: acc,
                smoothed_val_accuracy: detector.smoothed().expect("just updated"),
                nrmsd: detector.nrmsd(),
                avg_decision_time: avg_t,
            };
            on_row(&row);
            log.rows.push(row);
            loss_sum = 0.0;
            loss_batches = 0;
            if converged && log.episodes_to_convergence.is_none() {
                log.episodes_to_convergence = Some(seen);
                if config.stop_at_convergence {
                    break;
                }
            }
        }
    }
    Ok(Trained { model, log })
}

fn expect_kind(config: &TrainConfig, tag: &str) -> Result<()> {
    if config.model.tag() != tag {
        return Err(Error::Config {
            field: "model".into(),
            message: format!("expected a {tag} configuration, got {}", config.model.tag()),
        });
    }
    Ok(())
}

pub fn train_cbgt<T: Scalar, E: Environment + Reseed>(
    config: &TrainConfig,
    env: &mut E,
    val_env: &E,
    encoder: Encoder<T>,
) -> Result<Trained<T>> {
    expect_kind(config, "cbgt")?;
    train(config, env, val_env, encoder, |_| {})
}

pub fn train_lstm_baseline<T: Scalar, E: Environment + Reseed>(
    config: &TrainConfig,
    env: &mut E,
    val_env: &E,
    encoder: Encoder<T>,
) -> Result<Trained<T>> {
    expect_kind(config, "lstm")?;
    train(config, env, val_env, encoder, |_| {})
}

pub fn train_single_patch<T: Scalar, E: Environment + Reseed>(
    config: &TrainConfig,
    env: &mut E,
    val_env: &E,
    encoder: Encoder<T>,
) -> Result<Trained<T>> {
    expect_kind(config, "single_patch")?;
    train(config, env, val_env, encoder, |_| {})
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(output: Vec<f64>, target: usize) -> StreamResult {
        StreamResult {
            episode_id: 0,
            target,
            prediction: 0,
            decision_time: 1,
            decided_by_threshold: true,
            output,
        }
    }

    #[test]
    fn loss_examples() {
        assert_eq!(loss_at_decision(&result(vec![0.0, 1.0], 1)).unwrap(), 0.0);
        let l = loss_at_decision(&result(vec![0.1; 10], 4)).unwrap();
        assert!((l - 10f64.ln()).abs() < 1e-12);
        let a = loss_at_decision(&result(vec![0.2, 0.5, 0.3], 1)).unwrap();
        let b = loss_at_decision(&result(vec![0.3, 0.5, 0.2], 1)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn config_validation_names_the_field() {
        let mut c = TrainConfig::new(ModelKind::Cbgt { tau: 2.0, max_steps: 100 });
        c.batch_size = 0;
        match c.validate() {
            Err(Error::Config { field, .. }) => assert_eq!(field, "batch_size"),
            other => panic!("unexpected {other:?}"),
        }
        let c = TrainConfig::new(ModelKind::Lstm { seq_len: 0 });
        assert!(c.validate().is_err());
    }

    #[test]
    fn log_round_trips_and_replays_convergence() {
        let mut log = TrainLog::default();
        let mut det = ConvergenceDetector::default();
        for i in 1..=120u64 {
            let c = det.update(0.75).unwrap();
            if c && log.episodes_to_convergence.is_none() {
                log.episodes_to_convergence = Some(i * 10);
            }
            log.rows.push(LogRow {
                step: i * 2,
                episodes_seen: i * 10,
                mean_loss: 0.1 * i as f64,
                val_accuracy: 0.75,
                smoothed_val_accuracy: det.smoothed().unwrap(),
                nrmsd: det.nrmsd(),
                avg_decision_time: 1.5,
            });
        }
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("log.csv");
        log.write_csv(&p).unwrap();
        let back = TrainLog::read_csv(&p).unwrap();
        assert_eq!(back, log);
        assert_eq!(back.episodes_to_convergence, Some(1000));
    }
}
