//! Accuracy, decision time and convergence comparisons, plus the report files
//! they are written to.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cbgt::{run_batch, StreamResult, Threshold};
use crate::env::{Environment, Episode, Reseed};
use crate::error::{Error, Result};
use crate::models::{checkpoint, Model, ModelKind, OutputActivation};
use crate::numerics::{Scalar, Tape, Tensor};
use crate::train::TrainLog;

/// Default number of evaluation episodes.
pub const DEFAULT_EVAL_EPISODES: usize = 2048;
/// Episodes streamed together during evaluation.
const EVAL_CHUNK: usize = 512;

/// Runs `episodes` through `model` without touching its parameters.
///
/// CBGT models stream until their threshold; the single-patch baseline sees
/// one observation and the LSTM baseline exactly `seq_len`. Baselines never
/// decide by threshold, so their rows carry `decided_by_threshold = false`.
pub fn predict_batch<T: Scalar, E: Environment>(
    model: &Model<T>,
    env: &E,
    episodes: &mut [Episode],
    first_id: u64,
) -> Result<Vec<StreamResult>> {
    if episodes.is_empty() {
        return Ok(Vec::new());
    }
    let enc = &model.encoder;
    let probs: Tensor<T> = match model.kind {
        ModelKind::Cbgt { tau, max_steps } => {
            return run_batch(enc, Threshold::new(tau)?, env, episodes, first_id, max_steps);
        }
        ModelKind::SinglePatch => {
            let obs: Vec<Tensor<T>> = episodes.iter_mut().map(|e| env.next_observation(e)).collect();
            let refs: Vec<&Tensor<T>> = obs.iter().collect();
            let out = enc.encode_batch(&refs)?;
            if enc.config().output == OutputActivation::Softmax {
                out
            } else {
                let mut tape = Tape::new();
                let x = tape.constant(out);
                let y = tape.softmax(x)?;
                tape.value(y).clone()
            }
        }
        ModelKind::Lstm { seq_len } => {
            let lstm = model
                .lstm
                .as_ref()
                .ok_or_else(|| Error::Internal("LSTM model without its head".into()))?;
            let mut tape = Tape::new();
            let mut steps = Vec::with_capacity(seq_len);
            for _ in 0..seq_len {
                let obs: Vec<Tensor<T>> = episodes.iter_mut().map(|e| env.next_observation(e)).collect();
                let refs: Vec<&Tensor<T>> = obs.iter().collect();
                let e = enc.encode_batch(&refs)?;
                steps.push(tape.constant(e));
            }
            let y = lstm.forward(&mut tape, &steps)?;
            tape.value(y).clone()
        }
    };
    let steps = match model.kind {
        ModelKind::Lstm { seq_len } => seq_len,
        _ => 1,
    };
    episodes
        .iter()
        .enumerate()
        .map(|(i, ep)| {
            let y: Vec<f64> = probs.row(i).iter().map(|v| v.to_f64().expect("finite")).collect();
            Ok(StreamResult {
                episode_id: first_id + i as u64,
                target: ep.target,
                prediction: crate::numerics::argmax(probs.row(i)),
                decision_time: steps,
                decided_by_threshold: false,
                output: y,
            })
        })
        .collect()
}

/// Starts `n` episodes from `env` and predicts all of them.
pub fn predict_episodes<T: Scalar, E: Environment>(model: &Model<T>, env: &mut E, n: usize) -> Result<Vec<StreamResult>> {
    let mut rows = Vec::with_capacity(n);
    let mut next_id = 0u64;
    while rows.len() < n {
        let m = EVAL_CHUNK.min(n - rows.len());
        let mut eps = (0..m).map(|_| env.start_episode()).collect::<Result<Vec<_>>>()?;
        rows.extend(predict_batch(model, env, &mut eps, next_id)?);
        next_id += m as u64;
    }
    Ok(rows)
}

/// `(accuracy, average decision time)` of a set of episode results.
pub fn aggregate(rows: &[StreamResult]) -> (f64, f64) {
    if rows.is_empty() {
        return (0.0, 0.0);
    }
    let n = rows.len() as f64;
    let correct = rows.iter().filter(|r| r.correct()).count() as f64;
    let steps: usize = rows.iter().map(|r| r.decision_time).sum();
    (correct / n, steps as f64 / n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub env_id: String,
    pub model: String,
    pub tau: Option<f64>,
    pub seq_len: Option<usize>,
    pub accuracy: f64,
    pub avg_decision_time: f64,
    pub n_episodes: usize,
    /// Episodes seen in training before convergence, if known.
    pub episodes_to_convergence: Option<u64>,
    /// Episodes whose decision was forced at the step cap.
    pub forced_decisions: usize,
    #[serde(skip)]
    pub rows: Vec<StreamResult>,
}

impl EvalReport {
    pub fn from_rows<T: Scalar>(model: &Model<T>, env_id: &str, rows: Vec<StreamResult>) -> Self {
        let (accuracy, avg_decision_time) = aggregate(&rows);
        let (tau, seq_len) = match model.kind {
            ModelKind::Cbgt { tau, .. } => (Some(tau), None),
            ModelKind::Lstm { seq_len } => (None, Some(seq_len)),
            ModelKind::SinglePatch => (None, None),
        };
        let forced_decisions = match model.kind {
            ModelKind::Cbgt { .. } => rows.iter().filter(|r| !r.decided_by_threshold).count(),
            _ => 0,
        };
        Self {
            env_id: env_id.to_string(),
            model: model.kind.tag().to_string(),
            tau,
            seq_len,
            accuracy,
            avg_decision_time,
            n_episodes: rows.len(),
            episodes_to_convergence: None,
            forced_decisions,
            rows,
        }
    }

    /// File stem, e.g. `mnist_16x16_tau2`, `mnist_16x16_lstm2` or
    /// `mnist_16x16_single`.
    pub fn stem(&self) -> String {
        match (self.tau, self.seq_len) {
            (Some(tau), _) => format!("{}_tau{tau}", self.env_id),
            (None, Some(l)) => format!("{}_lstm{l}", self.env_id),
            (None, None) => format!("{}_single", self.env_id),
        }
    }

    pub const CSV_HEADER: [&'static str; 9] = [
        "env",
        "model",
        "tau",
        "seq_len",
        "accuracy",
        "avg_decision_time",
        "n_episodes",
        "episodes_to_convergence",
        "forced_decisions",
    ];

    pub fn csv_record(&self) -> Vec<String> {
        let opt = |v: Option<String>| v.unwrap_or_default();
        vec![
            self.env_id.clone(),
            self.model.clone(),
            opt(self.tau.map(|t| t.to_string())),
            opt(self.seq_len.map(|l| l.to_string())),
            self.accuracy.to_string(),
            self.avg_decision_time.to_string(),
            self.n_episodes.to_string(),
            opt(self.episodes_to_convergence.map(|e| e.to_string())),
            self.forced_decisions.to_string(),
        ]
    }

    fn episodes_csv(&self) -> Result<Vec<u8>> {
        let k = self.rows.first().map_or(0, |r| r.output.len());
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(StreamResult::csv_header(k))?;
        for r in &self.rows {
            w.write_record(r.csv_record())?;
        }
        w.into_inner().map_err(|e| Error::Internal(e.to_string()))
    }

    fn aggregate_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(Self::CSV_HEADER)?;
        w.write_record(self.csv_record())?;
        w.into_inner().map_err(|e| Error::Internal(e.to_string()))
    }

    /// Paths of the three report files inside `dir`.
    pub fn paths(&self, dir: &Path) -> [PathBuf; 3] {
        let stem = self.stem();
        [
            dir.join(format!("{stem}.csv")),
            dir.join(format!("{stem}.episodes.csv")),
            dir.join(format!("{stem}.json")),
        ]
    }

    /// Writes the aggregate CSV, the per-episode CSV and the JSON summary.
    /// All contents are rendered before any file is touched.
    pub fn write(&self, dir: &Path) -> Result<[PathBuf; 3]> {
        let contents = [
            self.aggregate_csv()?,
            self.episodes_csv()?,
            {
                let mut j = serde_json::to_vec_pretty(self)?;
                j.push(b'\n');
                j
            },
        ];
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let paths = self.paths(dir);
        for (p, c) in paths.iter().zip(contents) {
            fs::write(p, c).map_err(|e| Error::io(p, e))?;
        }
        Ok(paths)
    }

    /// Reads a per-episode CSV back into rows.
    pub fn read_episodes(path: &Path) -> Result<Vec<StreamResult>> {
        let mut r = csv::Reader::from_path(path)?;
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let field = |i: usize| rec.get(i).unwrap_or("");
            let bad = |what: &str| Error::Format {
                file: path.to_path_buf(),
                offset: rec.position().map_or(0, |p| p.byte()),
                message: format!("bad {what} field"),
            };
            rows.push(StreamResult {
                episode_id: field(0).parse().map_err(|_| bad("episode_id"))?,
                target: field(1).parse().map_err(|_| bad("target"))?,
                prediction: field(2).parse().map_err(|_| bad("prediction"))?,
                decision_time: field(3).parse().map_err(|_| bad("t_d"))?,
                decided_by_threshold: field(4).parse().map_err(|_| bad("decided_by_threshold"))?,
                output: (5..rec.len())
                    .map(|i| field(i).parse().map_err(|_| bad("y")))
                    .collect::<Result<_>>()?,
            });
        }
        Ok(rows)
    }
}

/// Evaluates `model` on `n_episodes` fresh episodes from `env`, which should
/// wrap the test split.
pub fn evaluate<T: Scalar, E: Environment>(model: &Model<T>, env: &mut E, n_episodes: usize) -> Result<EvalReport> {
    if n_episodes == 0 {
        return Err(Error::invalid("n_episodes must be at least 1"));
    }
    let rows = predict_episodes(model, env, n_episodes)?;
    Ok(EvalReport::from_rows(model, &env.id(), rows))
}

fn load_cell<T: Scalar>(what: String, path: &Path) -> Result<Model<T>> {
    if !path.exists() {
        return Err(Error::MissingCheckpoint {
            what,
            path: path.to_path_buf(),
        });
    }
    checkpoint::load(path)
}

/// One report per `(τ, checkpoint)` pair, every model seeing the same
/// episode stream (`env` reseeded with `eval_seed`).
pub fn sweep_thresholds<T: Scalar, E: Environment + Reseed>(
    checkpoints: &[(f64, PathBuf)],
    env: &E,
    eval_seed: u64,
    n_episodes: usize,
) -> Result<Vec<EvalReport>> {
    checkpoints
        .iter()
        .map(|(tau, path)| {
            let model: Model<T> = load_cell(format!("threshold tau={tau}"), path)?;
            evaluate(&model, &mut env.reseeded(eval_seed), n_episodes)
        })
        .collect()
}

/// One report per `(patch size, checkpoint)` pair; `make_env` builds the
/// test environment for a patch size.
pub fn sweep_patch_sizes<T: Scalar, E: Environment + Reseed>(
    checkpoints: &[(usize, PathBuf)],
    make_env: impl Fn(usize) -> Result<E>,
    eval_seed: u64,
    n_episodes: usize,
) -> Result<Vec<EvalReport>> {
    checkpoints
        .iter()
        .map(|(p, path)| {
            let model: Model<T> = load_cell(format!("patch size {p}"), path)?;
            let env = make_env(*p)?;
            evaluate(&model, &mut env.reseeded(eval_seed), n_episodes)
        })
        .collect()
}

/// Percentage fewer training episodes the first log needed to converge
/// compared with the second: `100·(lstm − cbgt)/lstm`.
pub fn compare_convergence(cbgt: &TrainLog, lstm: &TrainLog) -> Result<f64> {
    let c = cbgt
        .episodes_to_convergence
        .ok_or_else(|| Error::NotConverged("CBGT training log".into()))?;
    let l = lstm
        .episodes_to_convergence
        .ok_or_else(|| Error::NotConverged("LSTM training log".into()))?;
    percent_fewer(c, l)
}

/// `100·(baseline − candidate)/baseline`.
pub fn percent_fewer(candidate: u64, baseline: u64) -> Result<f64> {
    if baseline == 0 {
        return Err(Error::invalid("baseline converged after zero episodes"));
    }
    Ok(100.0 * (baseline as f64 - candidate as f64) / baseline as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(target: usize, prediction: usize, t_d: usize) -> StreamResult {
        StreamResult {
            episode_id: 0,
            target,
            prediction,
            decision_time: t_d,
            decided_by_threshold: true,
            output: vec![0.5, 0.5],
        }
    }

    #[test]
    fn aggregates_are_exact_means() {
        let (acc, t) = aggregate(&[row(0, 0, 1), row(1, 1, 3)]);
        assert_eq!((acc, t), (1.0, 2.0));
        let (acc, _) = aggregate(&[row(0, 0, 1), row(1, 0, 1), row(1, 0, 1), row(1, 1, 1)]);
        assert_eq!(acc, 0.5);
    }

    #[test]
    fn percentage_arithmetic() {
        assert_eq!(percent_fewer(250, 1000).unwrap(), 75.0);
        assert_eq!(percent_fewer(400, 400).unwrap(), 0.0);
        assert!(percent_fewer(1, 0).is_err());
    }
}
