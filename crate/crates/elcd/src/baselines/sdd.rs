//! Stable dynamics by closed-form projection onto a learned Lyapunov
//! function ("SDD").
//!
//! An unconstrained network `f̂` is corrected so the learned convex
//! potential `V` always decays:
//!
//! ```text
//! ẋ = f̂(x) - ∇V(x) · relu(∇V(x)ᵀ f̂(x) + α V(x)) / ‖∇V(x)‖²
//! ```
//!
//! `V` is an input-convex network composed through a smoothed ReLU ramp
//! (zero at zero) plus a small quadratic term, evaluated in coordinates
//! shifted by the equilibrium:
//! `V(x) = ramp(icnn(s) - icnn(0)) + ε_V ‖s‖²` with `s = x - x*`. This makes
//! `V` convex, `V(x*) = 0`, `V > 0` elsewhere, and `∇V(x*) = 0` exactly, so
//! the projection denominator only vanishes at the equilibrium (where the
//! field is zero by convention; a tiny `η` keeps the expression finite
//! there).

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::nn::{uniform_fan_in, HasParams, Mlp, Parameter};
use crate::Tensor;

/// Quadratic lower bound coefficient on `V`.
pub const EPSILON_V: f64 = 1e-3;
/// Width of the quadratic ramp smoothing the outer ReLU of `V`.
const RAMP_WIDTH: f64 = 0.5;
/// Regularizer keeping the projection finite exactly at the equilibrium.
const ETA: f64 = 1e-30;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SddConfig {
    pub dim: usize,
    /// Decay rate enforced on the potential: `∇Vᵀẋ ≤ -α V`.
    pub alpha: f64,
    /// Hidden width of both `f̂` and the convex potential.
    pub hidden: usize,
}

impl SddConfig {
    pub fn with_dim(dim: usize) -> SddConfig {
        SddConfig {
            dim,
            alpha: 0.05,
            hidden: 16,
        }
    }
}

/// Input-convex scalar network: hidden pre-activations combine a nonnegative
/// (squared-weight) map of the previous convex layer with a free affine map
/// of the input; softplus keeps each layer convex and nondecreasing in the
/// convex argument.
#[derive(Clone, Debug)]
struct Icnn {
    w1: Parameter, // [h, d]
    b1: Parameter, // [h]
    u2_raw: Parameter, // [h, h], squared before use
    w2: Parameter, // [h, d]
    b2: Parameter, // [h]
    u3_raw: Parameter, // [1, h], squared before use
    w3: Parameter, // [1, d]
    b3: Parameter, // [1]
}

impl Icnn {
    fn new(prefix: &str, dim: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Icnn {
        let mk = |name: &str, shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng| {
            Parameter::new(format!("{prefix}.{name}"), uniform_fan_in(shape, fan_in, rng))
        };
        Icnn {
            w1: mk("w1", &[hidden, dim], dim, rng),
            b1: mk("b1", &[hidden], dim, rng),
            u2_raw: mk("u2_raw", &[hidden, hidden], hidden, rng),
            w2: mk("w2", &[hidden, dim], dim, rng),
            b2: mk("b2", &[hidden], dim, rng),
            u3_raw: mk("u3_raw", &[1, hidden], hidden, rng),
            w3: mk("w3", &[1, dim], dim, rng),
            b3: mk("b3", &[1], dim, rng),
        }
    }

    fn forward(&self, tape: &Tape, s: Var) -> Var {
        let a1 = tape.softplus(tape.add(
            tape.matvec(tape.param(&self.w1), s),
            tape.param(&self.b1),
        ));
        let u2 = tape.square(tape.param(&self.u2_raw));
        let a2 = tape.softplus(tape.add(
            tape.add(
                tape.matvec(u2, a1),
                tape.matvec(tape.param(&self.w2), s),
            ),
            tape.param(&self.b2),
        ));
        let u3 = tape.square(tape.param(&self.u3_raw));
        tape.add(
            tape.add(
                tape.matvec(u3, a2),
                tape.matvec(tape.param(&self.w3), s),
            ),
            tape.param(&self.b3),
        )
    }

    fn forward_f64(&self, s: &[f64]) -> f64 {
        let h = self.b1.value().len();
        let softplus = crate::autodiff::softplus;
        let mut a1 = vec![0.0; h];
        for i in 0..h {
            let mut acc = self.b1.value().data()[i];
            for (j, sj) in s.iter().enumerate() {
                acc += self.w1.value().get(i, j) * sj;
            }
            a1[i] = softplus(acc);
        }
        let mut a2 = vec![0.0; h];
        for i in 0..h {
            let mut acc = self.b2.value().data()[i];
            for (k, a) in a1.iter().enumerate() {
                let u = self.u2_raw.value().get(i, k);
                acc += u * u * a;
            }
            for (j, sj) in s.iter().enumerate() {
                acc += self.w2.value().get(i, j) * sj;
            }
            a2[i] = softplus(acc);
        }
        let mut out = self.b3.value().data()[0];
        for (k, a) in a2.iter().enumerate() {
            let u = self.u3_raw.value().get(0, k);
            out += u * u * a;
        }
        for (j, sj) in s.iter().enumerate() {
            out += self.w3.value().get(0, j) * sj;
        }
        out
    }

    fn params(&self) -> [&Parameter; 8] {
        [
            &self.w1, &self.b1, &self.u2_raw, &self.w2, &self.b2, &self.u3_raw, &self.w3,
            &self.b3,
        ]
    }

    fn params_mut(&mut self) -> [&mut Parameter; 8] {
        [
            &mut self.w1,
            &mut self.b1,
            &mut self.u2_raw,
            &mut self.w2,
            &mut self.b2,
            &mut self.u3_raw,
            &mut self.w3,
            &mut self.b3,
        ]
    }
}

/// `C¹` convex nondecreasing ramp: `0` for `x ≤ 0`, `x²/2δ` on `[0, δ]`,
/// `x - δ/2` beyond — `relu(x)² - relu(x-δ)²` over `2δ`.
fn ramp_f64(x: f64) -> f64 {
    let r = x.max(0.0);
    let r2 = (x - RAMP_WIDTH).max(0.0);
    (r * r - r2 * r2) / (2.0 * RAMP_WIDTH)
}

fn ramp_tape(tape: &Tape, x: Var) -> Var {
    let r = tape.square(tape.relu(x));
    let r2 = tape.square(tape.relu(tape.add_scalar(x, -RAMP_WIDTH)));
    tape.scale(tape.sub(r, r2), 1.0 / (2.0 * RAMP_WIDTH))
}

/// The projection-stabilized model: free dynamics `f̂` plus the convex
/// potential defining the decay constraint.
#[derive(Clone, Debug)]
pub struct SddModel {
    config: SddConfig,
    f_hat: Mlp,
    icnn: Icnn,
}

impl SddModel {
    pub fn new(config: SddConfig, prefix: &str, rng: &mut ChaCha8Rng) -> SddModel {
        let d = config.dim;
        let h = config.hidden;
        SddModel {
            f_hat: Mlp::new(&format!("{prefix}.f_hat"), &[d, h, h, d], false, rng),
            icnn: Icnn::new(&format!("{prefix}.icnn"), d, h, rng),
            config,
        }
    }

    pub fn config(&self) -> &SddConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    /// `V(x) = ramp(icnn(s) - icnn(0)) + ε_V ‖s‖²`, `s = x - x*`.
    pub fn potential_f64(&self, x: &[f64], x_star: &[f64]) -> f64 {
        let s: Vec<f64> = x.iter().zip(x_star).map(|(a, b)| a - b).collect();
        let zero = vec![0.0; s.len()];
        let raw = self.icnn.forward_f64(&s) - self.icnn.forward_f64(&zero);
        ramp_f64(raw) + EPSILON_V * s.iter().map(|v| v * v).sum::<f64>()
    }

    /// `∇V` by central differences (diagnostics only; the tape path is the
    /// authoritative gradient).
    pub fn potential_grad_fd(&self, x: &[f64], x_star: &[f64], h: f64) -> Vec<f64> {
        let mut grad = vec![0.0; x.len()];
        let mut xp = x.to_vec();
        for i in 0..x.len() {
            xp[i] = x[i] + h;
            let up = self.potential_f64(&xp, x_star);
            xp[i] = x[i] - h;
            let dn = self.potential_f64(&xp, x_star);
            xp[i] = x[i];
            grad[i] = (up - dn) / (2.0 * h);
        }
        grad
    }

    /// Potential and its exact gradient at `x` (via a private tape).
    pub fn potential_and_grad_f64(&self, x: &[f64], x_star: &[f64]) -> (f64, Vec<f64>) {
        let tape = Tape::new();
        let xv = tape.constant(Tensor::vector(x));
        let sv = tape.sub(xv, tape.constant(Tensor::vector(x_star)));
        let v = self.potential_tape(&tape, sv);
        let grad = tape.jacobian(xv, v);
        (
            tape.value(v).value(),
            tape.value(grad).data().to_vec(),
        )
    }

    /// Tape potential taking the pre-shifted coordinate `s = x - x*`.
    fn potential_tape(&self, tape: &Tape, s: Var) -> Var {
        let d = tape.shape(s)[0];
        let zero = tape.zeros(&[d]);
        let raw = tape.sub(self.icnn.forward(tape, s), self.icnn.forward(tape, zero));
        tape.add(
            ramp_tape(tape, raw),
            tape.scale(tape.sum(tape.square(s)), EPSILON_V),
        )
    }

    /// The projected field on the tape (differentiable in x and parameters).
    ///
    /// At `x = x*` the raw projection would return `f̂(x*)` (the correction
    /// vanishes with `∇V`), so the field is pinned to zero there by
    /// convention; the branch is chosen by the traced values.
    pub fn field_tape(&self, tape: &Tape, x: Var, x_star: Var) -> Var {
        if tape.value(x).data() == tape.value(x_star).data() {
            let d = tape.shape(x)[0];
            return tape.zeros(&[d]);
        }
        let s = tape.sub(x, x_star);
        let f_hat = self.f_hat.forward(tape, x);
        let v = self.potential_tape(tape, s);
        // ∇V with respect to x equals the gradient in s.
        let grad_row = tape.jacobian(s, v);
        let d = tape.shape(s)[0];
        let grad = tape.reshape(grad_row, &[d]);
        let inner = tape.add(tape.dot(grad, f_hat), tape.scale(v, self.config.alpha));
        let violation = tape.relu(inner);
        let denom = tape.add_scalar(tape.sum(tape.square(grad)), ETA);
        let coeff = tape.div(violation, denom);
        tape.sub(f_hat, tape.scale_var(coeff, grad))
    }

    /// Value-level mirror of [`SddModel::field_tape`].
    pub fn field_f64(&self, x: &[f64], x_star: &[f64]) -> Vec<f64> {
        if x == x_star {
            return vec![0.0; x.len()];
        }
        let f_hat = self.f_hat.forward_f64(x);
        let (v, grad) = self.potential_and_grad_f64(x, x_star);
        let inner = grad.iter().zip(&f_hat).map(|(g, f)| g * f).sum::<f64>() + self.config.alpha * v;
        let violation = inner.max(0.0);
        let denom = grad.iter().map(|g| g * g).sum::<f64>() + ETA;
        let coeff = violation / denom;
        f_hat
            .iter()
            .zip(&grad)
            .map(|(f, g)| f - coeff * g)
            .collect()
    }
}

impl HasParams for SddModel {
    fn visit_params(&self, f: &mut dyn FnMut(&Parameter)) {
        self.f_hat.visit_params(f);
        for p in self.icnn.params() {
            f(p);
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        self.f_hat.visit_params_mut(f);
        for p in self.icnn.params_mut() {
            f(p);
        }
    }
}
