//! Stability by construction through a normalizing flow ("EFlow").
//!
//! All expressiveness lives in the diffeomorphism; the latent dynamics are
//! the fixed unit-speed descent
//!
//! ```text
//! ż = -(z - z*) / max(‖z - z*‖, δ)
//! ```
//!
//! whose radius shrinks at rate one until the final `δ`-ball, where the
//! field blends linearly to zero. Pulled back through any invertible map
//! `φ`, the data-space field `f(x) = Dφ(x)⁻¹ ż(φ(x))` makes
//! `‖φ(x(t)) - φ(x*)‖` strictly nonincreasing along every trajectory, so
//! stability holds regardless of how the flow is trained.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::Tensor;

/// Radius below which the descent blends linearly to zero.
pub const DEFAULT_DELTA: f64 = 1e-3;

/// The fixed latent field: unit-speed motion toward `z*`. It has no
/// trainable parameters — a composed diffeomorphism carries all of them.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DescentField {
    pub delta: f64,
}

impl Default for DescentField {
    fn default() -> DescentField {
        DescentField {
            delta: DEFAULT_DELTA,
        }
    }
}

impl DescentField {
    pub fn field_f64(&self, z: &[f64], z_star: &[f64]) -> Vec<f64> {
        let diff: Vec<f64> = z.iter().zip(z_star).map(|(a, b)| a - b).collect();
        let r = diff.iter().map(|d| d * d).sum::<f64>().sqrt();
        let scale = -1.0 / r.max(self.delta);
        diff.iter().map(|d| d * scale).collect()
    }

    /// Tape twin of [`field_f64`]. The branch is chosen by the traced value:
    /// away from `z*` the radius stays on the tape (so gradients see the
    /// normalization), inside the `δ`-ball the scale is the constant `1/δ`.
    pub fn field_tape(&self, tape: &Tape, z: Var, z_star: Var) -> Var {
        let diff = tape.sub(z, z_star);
        let r = tape.norm(diff);
        let r_val = tape.value(r).value();
        if r_val < self.delta {
            tape.scale(diff, -1.0 / self.delta)
        } else {
            let recip = tape.div(tape.constant(Tensor::scalar(-1.0)), r);
            tape.scale_var(recip, diff)
        }
    }
}
