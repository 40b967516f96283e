//! Evidence accumulation, the threshold test and the streaming decision loop.
//!
//! Each observation is mapped to an evidence vector `e_t`, the accumulator
//! sums them (`a_t = a_{t-1} + e_t`, `a_0 = 0`), and the first step at which
//! any element of `a_t` reaches the threshold `τ` is the decision time `t_d`.
//! The output is `softmax(a_{t_d})` and the prediction its argmax. Streams
//! that never reach `τ` are cut off at `max_steps` and flagged as forced.

use crate::env::{Environment, Episode};
use crate::error::{Error, Result};
use crate::models::{to_nchw, Encoder, EvidenceVector};
use crate::numerics::{argmax, softmax, Scalar, Tape, Tensor, Var};

/// Default cap on the number of observations per episode.
pub const DEFAULT_MAX_STEPS: usize = 100;

/// Running evidence sum for one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct AccumulatorState<T> {
    a: Vec<T>,
    t: usize,
}

impl<T: Scalar> AccumulatorState<T> {
    pub fn new(num_categories: usize) -> Self {
        Self {
            a: vec![T::zero(); num_categories],
            t: 0,
        }
    }

    pub fn num_categories(&self) -> usize {
        self.a.len()
    }

    /// The accumulated evidence `a_t`.
    pub fn evidence(&self) -> &[T] {
        &self.a
    }

    /// Number of evidence vectors consumed.
    pub fn steps(&self) -> usize {
        self.t
    }

    pub fn accumulate(&mut self, e: &[T]) -> Result<()> {
        if e.len() != self.a.len() {
            return Err(Error::invalid(format!(
                "evidence of length {} for an accumulator of {} categories",
                e.len(),
                self.a.len()
            )));
        }
        for (a, &x) in self.a.iter_mut().zip(e) {
            *a += x;
        }
        self.t += 1;
        Ok(())
    }

    /// `softmax(a_t)`; only defined once some evidence has arrived.
    pub fn readout(&self) -> Result<Vec<T>> {
        if self.t == 0 {
            return Err(Error::InvalidState("readout before any evidence was accumulated".into()));
        }
        softmax(&self.a)
    }
}

/// Fixed decision threshold `τ ≥ 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Threshold {
    tau: f64,
}

impl Threshold {
    pub fn new(tau: f64) -> Result<Self> {
        if !(tau.is_finite() && tau >= 0.0) {
            return Err(Error::invalid(format!("threshold must be finite and >= 0, got {tau}")));
        }
        Ok(Self { tau })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// True iff some accumulated element is at least `τ`.
    pub fn check<T: Scalar>(&self, state: &AccumulatorState<T>) -> bool {
        let tau = T::lit(self.tau);
        state.a.iter().any(|&v| v >= tau)
    }
}

pub fn check_threshold<T: Scalar>(state: &AccumulatorState<T>, threshold: Threshold) -> bool {
    threshold.check(state)
}

/// Outcome of one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamResult {
    pub episode_id: u64,
    pub target: usize,
    pub prediction: usize,
    /// Step at which the decision was taken, starting at 1.
    pub decision_time: usize,
    /// False when the decision was forced at the step cap.
    pub decided_by_threshold: bool,
    /// Class probabilities at the decision time.
    pub output: Vec<f64>,
}

impl StreamResult {
    fn from_state<T: Scalar>(
        episode_id: u64,
        target: usize,
        state: &AccumulatorState<T>,
        decided_by_threshold: bool,
    ) -> Result<Self> {
        let y = state.readout()?;
        Ok(Self {
            episode_id,
            target,
            prediction: argmax(&y),
            decision_time: state.steps(),
            decided_by_threshold,
            output: y.iter().map(|v| v.to_f64().expect("finite")).collect(),
        })
    }

    pub fn correct(&self) -> bool {
        self.prediction == self.target
    }

    pub fn csv_header(num_categories: usize) -> Vec<String> {
        let mut h: Vec<String> = ["episode_id", "target", "prediction", "t_d", "decided_by_threshold"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        h.extend((0..num_categories).map(|i| format!("y_{i}")));
        h
    }

    pub fn csv_record(&self) -> Vec<String> {
        let mut r = vec![
            self.episode_id.to_string(),
            self.target.to_string(),
            self.prediction.to_string(),
            self.decision_time.to_string(),
            self.decided_by_threshold.to_string(),
        ];
        r.extend(self.output.iter().map(|v| v.to_string()));
        r
    }
}

/// Runs the accumulate/check loop over evidence pulled from `next`, keeping
/// every evidence vector consumed. `next` returning `None` before a decision
/// is an internal error: streams are meant to be unbounded.
pub fn run_stream_traced<T: Scalar>(
    episode_id: u64,
    target: usize,
    num_categories: usize,
    threshold: Threshold,
    max_steps: usize,
    mut next: impl FnMut() -> Result<Option<EvidenceVector<T>>>,
) -> Result<(StreamResult, Vec<EvidenceVector<T>>)> {
    if max_steps == 0 {
        return Err(Error::invalid("max_steps must be at least 1"));
    }
    let mut state = AccumulatorState::new(num_categories);
    let mut trace = Vec::new();
    loop {
        let e = next()?.ok_or_else(|| {
            Error::Internal(format!(
                "evidence stream of episode {episode_id} ended after {} steps without a decision",
                state.steps()
            ))
        })?;
        state.accumulate(e.values())?;
        trace.push(e);
        let crossed = threshold.check(&state);
        if crossed || state.steps() == max_steps {
            let result = StreamResult::from_state(episode_id, target, &state, crossed)?;
            return Ok((result, trace));
        }
    }
}

pub fn run_stream<T: Scalar>(
    episode_id: u64,
    target: usize,
    num_categories: usize,
    threshold: Threshold,
    max_steps: usize,
    next: impl FnMut() -> Result<Option<EvidenceVector<T>>>,
) -> Result<StreamResult> {
    Ok(run_stream_traced(episode_id, target, num_categories, threshold, max_steps, next)?.0)
}

/// Streams one episode through `encoder` until a decision.
pub fn run_episode<T: Scalar, E: Environment>(
    encoder: &Encoder<T>,
    threshold: Threshold,
    env: &E,
    episode: &mut Episode,
    episode_id: u64,
    max_steps: usize,
) -> Result<StreamResult> {
    let target = episode.target;
    run_stream(episode_id, target, encoder.num_categories(), threshold, max_steps, || {
        let obs = env.next_observation::<T>(episode);
        encoder.encode(&obs).map(Some)
    })
}

/// Per-episode bookkeeping for streams that advance in lockstep.
struct Lockstep<T> {
    states: Vec<AccumulatorState<T>>,
    decided: Vec<Option<bool>>,
    threshold: Threshold,
    max_steps: usize,
}

impl<T: Scalar> Lockstep<T> {
    fn new(n: usize, k: usize, threshold: Threshold, max_steps: usize) -> Result<Self> {
        if max_steps == 0 {
            return Err(Error::invalid("max_steps must be at least 1"));
        }
        Ok(Self {
            states: vec![AccumulatorState::new(k); n],
            decided: vec![None; n],
            threshold,
            max_steps,
        })
    }

    fn active(&self) -> Vec<usize> {
        (0..self.decided.len()).filter(|&i| self.decided[i].is_none()).collect()
    }

    /// Adds row `j` of `evidence` to episode `active[j]` and settles the
    /// episodes that cross the threshold or hit the cap.
    fn absorb(&mut self, active: &[usize], evidence: &Tensor<T>) -> Result<()> {
        for (j, &i) in active.iter().enumerate() {
            let s = &mut self.states[i];
            s.accumulate(evidence.row(j))?;
            if self.threshold.check(s) {
                self.decided[i] = Some(true);
            } else if s.steps() == self.max_steps {
                self.decided[i] = Some(false);
            }
        }
        Ok(())
    }

    fn results(&self, episodes: &[Episode], first_id: u64) -> Result<Vec<StreamResult>> {
        self.states
            .iter()
            .zip(&self.decided)
            .zip(episodes)
            .enumerate()
            .map(|(i, ((s, d), ep))| {
                let by_threshold = d.ok_or_else(|| Error::Internal("episode left undecided".into()))?;
                StreamResult::from_state(first_id + i as u64, ep.target, s, by_threshold)
            })
            .collect()
    }
}

/// Runs a batch of episodes side by side without recording gradients.
/// Episode `i` gets id `first_id + i`. Results are identical to running
/// each episode alone with [`run_episode`] up to encoder rounding.
pub fn run_batch<T: Scalar, E: Environment>(
    encoder: &Encoder<T>,
    threshold: Threshold,
    env: &E,
    episodes: &mut [Episode],
    first_id: u64,
    max_steps: usize,
) -> Result<Vec<StreamResult>> {
    let mut lock = Lockstep::new(episodes.len(), encoder.num_categories(), threshold, max_steps)?;
    loop {
        let active = lock.active();
        if active.is_empty() {
            break;
        }
        let obs: Vec<Tensor<T>> = active
            .iter()
            .map(|&i| env.next_observation(&mut episodes[i]))
            .collect();
        let refs: Vec<&Tensor<T>> = obs.iter().collect();
        let e = encoder.encode_batch(&refs)?;
        lock.absorb(&active, &e)?;
    }
    lock.results(episodes, first_id)
}

/// A batch streamed on a tape: `probs` is the `[B, K]` readout at each
/// episode's decision time, differentiable with respect to the encoder.
pub struct TapedBatch {
    pub probs: Var,
    pub results: Vec<StreamResult>,
}

/// Like [`run_batch`], but records every encoder application on `tape` so
/// the loss at the decision time can be backpropagated. Decided episodes
/// stop receiving evidence, which freezes their accumulator row; the
/// decision time itself is not differentiated through.
///
/// `encode` maps an `N × C × H × W` batch to `[N, K]` evidence.
#[allow(clippy::too_many_arguments)]
pub fn run_batch_on_tape<T: Scalar, E: Environment>(
    tape: &mut Tape<T>,
    mut encode: impl FnMut(&mut Tape<T>, Var) -> Result<Var>,
    num_categories: usize,
    threshold: Threshold,
    env: &E,
    episodes: &mut [Episode],
    first_id: u64,
    max_steps: usize,
) -> Result<TapedBatch> {
    let n = episodes.len();
    let shape = env.observation_shape();
    let mut lock = Lockstep::new(n, num_categories, threshold, max_steps)?;
    let mut acc = tape.constant(Tensor::zeros(&[n, num_categories]));
    loop {
        let active = lock.active();
        if active.is_empty() {
            break;
        }
        let obs: Vec<Tensor<T>> = active
            .iter()
            .map(|&i| env.next_observation(&mut episodes[i]))
            .collect();
        let refs: Vec<&Tensor<T>> = obs.iter().collect();
        let x = tape.constant(to_nchw(&refs, shape)?);
        let e = encode(tape, x)?;
        lock.absorb(&active, tape.value(e))?;
        let rows = tape.scatter_rows(e, &active, n)?;
        acc = tape.add(acc, rows)?;
    }
    let probs = tape.softmax(acc)?;
    Ok(TapedBatch {
        probs,
        results: lock.results(episodes, first_id)?,
    })
}
