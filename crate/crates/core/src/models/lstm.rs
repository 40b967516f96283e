use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EvidenceVector;
use crate::error::{Error, Result};
use crate::numerics::{ParamId, ParamStore, Scalar, Tape, Tensor, Var};

/// Memory cells in the LSTM baseline.
pub const LSTM_HIDDEN: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LstmConfig {
    /// Width of each input step (the encoder's K).
    pub input_size: usize,
    pub hidden_size: usize,
    pub seq_len: usize,
    pub num_categories: usize,
}

impl LstmConfig {
    pub fn new(num_categories: usize, seq_len: usize) -> Self {
        Self {
            input_size: num_categories,
            hidden_size: LSTM_HIDDEN,
            seq_len,
            num_categories,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_size != LSTM_HIDDEN {
            return Err(Error::invalid(format!(
                "LSTM hidden size must be {LSTM_HIDDEN}, got {}",
                self.hidden_size
            )));
        }
        if self.seq_len == 0 {
            return Err(Error::invalid("LSTM sequence length must be at least 1"));
        }
        if self.num_categories < 2 || self.input_size == 0 {
            return Err(Error::invalid("LSTM needs input_size >= 1 and at least 2 categories"));
        }
        Ok(())
    }
}

/// Single LSTM layer over evidence vectors followed by a linear + softmax head
/// on the final hidden state. Gate order in the fused weights: input, forget,
/// cell candidate, output.
#[derive(Debug, Clone)]
pub struct LstmClassifier<T: Scalar> {
    config: LstmConfig,
    store: ParamStore<T>,
    w_input: ParamId,
    w_hidden: ParamId,
    bias: ParamId,
    w_out: ParamId,
    b_out: ParamId,
}

impl<T: Scalar> LstmClassifier<T> {
    pub fn new(config: LstmConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut uniform = |shape: [usize; 2], fan_in: usize| {
            let limit = (3.0 / fan_in as f64).sqrt();
            let data = (0..shape[0] * shape[1])
                .map(|_| T::lit(rng.random_range(-limit..limit)))
                .collect();
            Tensor::new(shape.to_vec(), data).expect("shape matches")
        };
        let (x, h, k) = (config.input_size, config.hidden_size, config.num_categories);
        let mut store = ParamStore::new();
        let w_input = store.add("w_input", uniform([x, 4 * h], x))?;
        let w_hidden = store.add("w_hidden", uniform([h, 4 * h], h))?;
        let bias = store.add("bias", Tensor::zeros(&[4 * h]))?;
        let w_out = store.add("head.weight", uniform([h, k], h))?;
        let b_out = store.add("head.bias", Tensor::zeros(&[k]))?;
        Ok(Self {
            config,
            store,
            w_input,
            w_hidden,
            bias,
            w_out,
            b_out,
        })
    }

    pub fn config(&self) -> &LstmConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    /// Runs the recurrence over `steps` (each `[N, input_size]`) and returns
    /// `[N, K]` class probabilities from the final hidden state.
    pub fn forward(&self, tape: &mut Tape<T>, steps: &[Var]) -> Result<Var> {
        if steps.len() != self.config.seq_len {
            return Err(Error::invalid(format!(
                "LSTM expects {} steps, got {}",
                self.config.seq_len,
                steps.len()
            )));
        }
        let hs = self.config.hidden_size;
        let n = tape.shape(steps[0])[0];
        let w_x = tape.param(&self.store, self.w_input);
        let w_h = tape.param(&self.store, self.w_hidden);
        let b = tape.param(&self.store, self.bias);
        let mut h = tape.constant(Tensor::zeros(&[n, hs]));
        let mut c = tape.constant(Tensor::zeros(&[n, hs]));
        for &x in steps {
            if tape.shape(x) != [n, self.config.input_size] {
                return Err(Error::invalid(format!(
                    "LSTM step shape {:?}, expected [{n}, {}]",
                    tape.shape(x),
                    self.config.input_size
                )));
            }
            let zx = tape.matmul(x, w_x)?;
            let zh = tape.matmul(h, w_h)?;
            let z = tape.add(zx, zh)?;
            let z = tape.add_bias(z, b)?;
            let i = tape.slice_cols(z, 0, hs)?;
            let i = tape.sigmoid(i);
            let f = tape.slice_cols(z, hs, hs)?;
            let f = tape.sigmoid(f);
            let g = tape.slice_cols(z, 2 * hs, hs)?;
            let g = tape.tanh(g);
            let o = tape.slice_cols(z, 3 * hs, hs)?;
            let o = tape.sigmoid(o);
            let keep = tape.mul(f, c)?;
            let write = tape.mul(i, g)?;
            c = tape.add(keep, write)?;
            let squashed = tape.tanh(c);
            h = tape.mul(o, squashed)?;
        }
        let w_o = tape.param(&self.store, self.w_out);
        let b_o = tape.param(&self.store, self.b_out);
        let logits = tape.matmul(h, w_o)?;
        let logits = tape.add_bias(logits, b_o)?;
        tape.softmax(logits)
    }

    /// Class probabilities for one evidence sequence of length `seq_len`.
    pub fn predict(&self, sequence: &[EvidenceVector<T>]) -> Result<Vec<T>> {
        if sequence.len() != self.config.seq_len {
            return Err(Error::invalid(format!(
                "LSTM expects a sequence of {} evidence vectors, got {}",
                self.config.seq_len,
                sequence.len()
            )));
        }
        let mut tape = Tape::new();
        let mut steps = Vec::with_capacity(sequence.len());
        for e in sequence {
            let t = Tensor::new(vec![1, e.len()], e.values().to_vec())?;
            steps.push(tape.constant(t));
        }
        let y = self.forward(&mut tape, &steps)?;
        Ok(tape.value(y).data().to_vec())
    }
}
