//! Baseline stable-dynamics learners for comparison studies.
//!
//! Three established routes to stability, each enforcing it differently:
//!
//! - [`sdd`]: project an unconstrained field onto the descent directions of
//!   a learned convex Lyapunov function (stability via projection).
//! - [`ncds`]: parameterize a negative-definite Jacobian and integrate it
//!   into a field (contraction in the identity metric by construction).
//! - [`eflow`]: pull a fixed unit-speed descent back through an invertible
//!   flow (stability by conjugacy, expressiveness in the flow).

pub mod eflow;
pub mod ncds;
pub mod sdd;

pub use eflow::DescentField;
pub use ncds::{NcdsConfig, NcdsModel};
pub use sdd::{SddConfig, SddModel};
