//! Dense f64 tensors with tape-free reverse-mode differentiation.
//!
//! Each [`Tensor`] produced by an op keeps a handle to its operands, so the
//! graph is the tensors themselves. [`Tensor::backward`] walks it once in
//! reverse topological order and adds each tracked node's gradient into its
//! gradient slot; slots are cleared explicitly with [`Tensor::zero_grad`].
//!
//! A graph is confined to the thread that built it. Independent graphs can
//! be built on separate threads.

mod error;
mod gradcheck;
pub mod ops;
mod optim;
mod tensor;

pub use error::{Result, TensorError};
pub use gradcheck::{grad_check, GradCheckReport, REL_ERROR_FLOOR};
pub use ops::{activation, concat, conv2d, conv2d_grouped, conv3d, stack, Activation, BinaryKind};
pub use optim::{adamw_step, one_cycle_lr, AdamWConfig, LrSchedule, OptimizerState};
pub use tensor::{grad_enabled, no_grad, Backward, Tensor};
