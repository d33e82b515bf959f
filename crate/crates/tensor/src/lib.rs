//! Dense tensors and a reverse-mode automatic differentiation tape.
//!
//! The tape is an arena: every operation appends a node and returns the id of
//! its output tensor. `Tape::backward` walks the arena in strict reverse
//! creation order and accumulates gradients for every leaf that was registered
//! with `requires_grad`, so a single backward pass differentiates through
//! arbitrarily nested computations (including a network whose weights are
//! themselves outputs of another network).
//!
//! All element types go through the [`Real`] trait; f64 is the reference
//! precision used by the finite-difference checks in [`gradcheck`], f32 is the
//! throughput option for training runs.

mod dtype;
mod error;
pub mod gradcheck;
mod io;
mod kernels;
mod tape;
mod tensor;

pub use dtype::{Dtype, Real};
pub use error::TensorError;
pub use io::{read_tensor, write_tensor, TENSOR_MAGIC};
pub use tape::{BnMode, Gradients, Padding, RunningStats, Tape, Tid};
pub use tensor::Tensor;
