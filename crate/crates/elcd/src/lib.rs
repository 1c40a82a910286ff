//! Learning globally contracting dynamical systems from demonstrations.
//!
//! The model family here represents a vector field through an extended
//! linearization `f(x) = A(x, x*)(x - x*)` whose matrix-valued network is
//! constrained so the symmetric part of `A` stays uniformly negative
//! definite. Every trajectory of such a field converges exponentially to the
//! equilibrium `x*` — by construction, at initialization and at every
//! training step. An invertible coordinate transform (a stack of
//! rational-quadratic-spline coupling layers and linear layers) lets the
//! contracting latent field express curved, overshooting demonstrations in
//! data space, trained end to end by matching demonstrated velocities.
//!
//! The crate is a library first; see the `examples/` directory for runnable
//! walkthroughs of each capability, and `src/bin/elcd.rs` for the command
//! line wrapping the same entry points.

pub mod autodiff;
pub mod baselines;
pub mod checkpoint;
pub mod data;
pub mod elcd;
pub mod error;
pub mod eval;
pub mod flows;
pub mod rollout;
pub mod train;
pub mod verify;
pub mod cli;
pub mod linalg;
pub mod model;
pub mod nn;
pub mod plot;

pub use autodiff::{GradientMap, Tape, Tensor, Var};
pub use error::{Error, Result};
