//! Dense `f64` tensors with a tensor-level reverse-mode tape.

pub mod gradcheck;
mod kernels;
mod tape;
mod tensor;

pub use kernels::{layer_norm, masked_softmax_rows, softmax_rows_scaled, LAYER_NORM_EPS};
pub use tape::{Gradients, OpStats, Tape, Var};
pub use tensor::Tensor;

pub(crate) use kernels::sigmoid;
