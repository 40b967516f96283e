//! Finite-difference check of the decision-time loss through whole streams.

use std::sync::Arc;

use cbgt_net::cbgt::{run_batch_on_tape, Threshold};
use cbgt_net::env::{Environment, Episode, ImageDataset, PatchStreamEnv, Split};
use cbgt_net::models::{Encoder, EncoderConfig, InputShape};
use cbgt_net::numerics::{Tape, LOG_FLOOR};
use cbgt_net::train::backward_through_stream;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::rel_error;

const SHAPE: InputShape = InputShape {
    height: 8,
    width: 8,
    channels: 1,
};
const K: usize = 3;

/// Random 8×8 greyscale images streamed as 5×5 patches.
pub fn tiny_env(seed: u64) -> PatchStreamEnv {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 12;
    let pixels = (0..n * SHAPE.numel()).map(|_| rng.random()).collect();
    let labels = (0..n).map(|i| (i % K) as u8).collect();
    let data = ImageDataset::new("tiny", Split::Train, SHAPE, K, pixels, labels).unwrap();
    PatchStreamEnv::new(Arc::new(data), 5, seed).unwrap()
}

pub struct StreamCheck {
    pub rel_error: f64,
    pub decision_times: Vec<usize>,
    /// Whether any perturbed run decided at a different step.
    pub decision_times_moved: bool,
}

fn loss(encoder: &Encoder<f64>, env: &PatchStreamEnv, episodes: &[Episode], tau: f64, max_steps: usize) -> (f64, Vec<usize>) {
    let mut tape = Tape::new();
    let mut eps = episodes.to_vec();
    let batch = run_batch_on_tape(&mut tape, |t, x| encoder.forward(t, x), K, Threshold::new(tau).unwrap(), env, &mut eps, 0, max_steps).unwrap();
    let targets: Vec<usize> = episodes.iter().map(|e| e.target).collect();
    let l = tape.cross_entropy(batch.probs, &targets, LOG_FLOOR).unwrap();
    (tape.value(l).data()[0], batch.results.iter().map(|r| r.decision_time).collect())
}

/// Compares `backward_through_stream` with central differences over every
/// encoder parameter, for a batch of `episodes` streams.
pub fn check_stream_gradient(tau: f64, max_steps: usize, episodes: usize, seed: u64) -> StreamCheck {
    let mut env = tiny_env(seed);
    let mut encoder = Encoder::<f64>::new(EncoderConfig::mlp(SHAPE, vec![6], K), seed).unwrap();
    let eps: Vec<Episode> = (0..episodes).map(|_| env.start_episode().unwrap()).collect();

    let mut tape = Tape::new();
    let mut run_eps = eps.clone();
    let batch = run_batch_on_tape(&mut tape, |t, x| encoder.forward(t, x), K, Threshold::new(tau).unwrap(), &env, &mut run_eps, 0, max_steps).unwrap();
    let targets: Vec<usize> = eps.iter().map(|e| e.target).collect();
    let l = tape.cross_entropy(batch.probs, &targets, LOG_FLOOR).unwrap();
    let grads = backward_through_stream(&tape, l).unwrap();
    let decision_times: Vec<usize> = batch.results.iter().map(|r| r.decision_time).collect();
    drop(tape);
    let store = encoder.params_mut();
    store.zero_grads();
    grads.accumulate_into(store);

    let h = 1e-6;
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    let mut moved = false;
    let ids: Vec<_> = encoder.params().ids().collect();
    for id in ids {
        analytic.extend_from_slice(encoder.params().grad(id).data());
        for j in 0..encoder.params().value(id).len() {
            let mut plus = encoder.clone();
            plus.params_mut().value_mut(id).data_mut()[j] += h;
            let mut minus = encoder.clone();
            minus.params_mut().value_mut(id).data_mut()[j] -= h;
            let (lp, tp) = loss(&plus, &env, &eps, tau, max_steps);
            let (lm, tm) = loss(&minus, &env, &eps, tau, max_steps);
            moved |= tp != decision_times || tm != decision_times;
            numeric.push((lp - lm) / (2.0 * h));
        }
    }
    StreamCheck {
        rel_error: rel_error(&analytic, &numeric),
        decision_times,
        decision_times_moved: moved,
    }
}
