//! Dense tensors, reverse-mode differentiation and the Adam optimizer.

mod adam;
mod functional;
pub mod kernels;
mod params;
mod scalar;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use functional::{argmax, cross_entropy, softmax, LOG_FLOOR};
pub use params::{ParamId, ParamStore};
pub use scalar::{DType, Scalar};
pub use tape::{BatchNormMode, BatchStats, Gradients, Tape, Var, BATCH_NORM_EPS};
pub use tensor::Tensor;
