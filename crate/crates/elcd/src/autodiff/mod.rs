//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! The pieces: [`Tensor`] (values), [`Tape`]/[`Var`] (the recorded program),
//! [`Gradients`]/[`GradientMap`] (the reverse pass), and the
//! finite-difference harness in [`fd`] that every gradient in the crate is
//! checked against.

pub mod fd;
pub mod tape;
pub mod tensor;

pub use fd::{finite_diff_check_inputs, finite_diff_check_params, DEFAULT_FD_STEP};
pub use tape::{sigmoid, softplus, GradientMap, Gradients, Tape, Var};
pub use tensor::Tensor;
