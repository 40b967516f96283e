//! Evidence encoders, the LSTM baseline head, and checkpoint files.

pub mod checkpoint;
mod encoder;
mod lstm;

use serde::{Deserialize, Serialize};

pub use encoder::{
    to_nchw, Architecture, Encoder, EncoderConfig, EvidenceVector, InputShape, Mode, OutputActivation,
    RESNET_BLOCKS, RESNET_CHANNELS,
};
pub use lstm::{LstmClassifier, LstmConfig, LSTM_HIDDEN};

use crate::error::{Error, Result};
use crate::numerics::Scalar;

/// Which classifier is wrapped around the evidence encoder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelKind {
    /// Accumulate evidence until threshold `tau`, capped at `max_steps`.
    Cbgt { tau: f64, max_steps: usize },
    /// The encoder classifies one observation on its own.
    SinglePatch,
    /// Fixed-length LSTM over encoder outputs.
    Lstm { seq_len: usize },
}

impl ModelKind {
    pub fn tag(&self) -> &'static str {
        match self {
            ModelKind::Cbgt { .. } => "cbgt",
            ModelKind::SinglePatch => "single_patch",
            ModelKind::Lstm { .. } => "lstm",
        }
    }
}

/// A trainable classifier: an encoder plus, for the LSTM baseline, its head.
#[derive(Debug, Clone)]
pub struct Model<T: Scalar> {
    pub kind: ModelKind,
    pub encoder: Encoder<T>,
    pub lstm: Option<LstmClassifier<T>>,
    pub seed: u64,
}

impl<T: Scalar> Model<T> {
    pub fn new(kind: ModelKind, encoder: Encoder<T>, seed: u64) -> Result<Self> {
        let lstm = match kind {
            ModelKind::Lstm { seq_len } => {
                let cfg = LstmConfig::new(encoder.num_categories(), seq_len);
                // decorrelate from the encoder's initialization stream
                Some(LstmClassifier::new(cfg, seed ^ 0x9e37_79b9_7f4a_7c15)?)
            }
            ModelKind::Cbgt { tau, max_steps } => {
                if !(tau >= 0.0 && tau.is_finite()) {
                    return Err(Error::invalid(format!("threshold must be a finite value >= 0, got {tau}")));
                }
                if max_steps == 0 {
                    return Err(Error::invalid("max_steps must be at least 1"));
                }
                None
            }
            ModelKind::SinglePatch => None,
        };
        Ok(Self {
            kind,
            encoder,
            lstm,
            seed,
        })
    }

    /// Copies of every parameter value, encoder first.
    pub fn flat_values(&self) -> Vec<T> {
        let mut v = self.encoder.params().flat_values();
        if let Some(l) = &self.lstm {
            v.extend(l.params().flat_values());
        }
        v
    }
}
