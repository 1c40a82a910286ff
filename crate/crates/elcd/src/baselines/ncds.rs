//! Contracting dynamics from a learned negative-definite Jacobian ("NCDS").
//!
//! Instead of parameterizing the vector field directly, a network produces a
//! square factor `J_θ(z)` whose Gram form defines the field's Jacobian:
//!
//! ```text
//! Df(z) = -(J_θ(z)ᵀ J_θ(z) + ε I)
//! ```
//!
//! which is symmetric negative definite with `λ_max ≤ -ε` everywhere, so the
//! field is contracting at rate `ε` in the identity metric by construction.
//! The field itself is recovered by integrating the Jacobian along the
//! straight segment from a trainable anchor `(x₀, v₀)`:
//!
//! ```text
//! f(z) = v₀ + (∫₀¹ Df(x₀ + t (z - x₀)) dt) (z - x₀)
//! ```
//!
//! evaluated with a composite trapezoid rule. This yields `f(x₀) = v₀`
//! exactly and a globally contracting field whose implicit equilibrium is
//! learned from data rather than pinned in advance.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::nn::{HasParams, Mlp, Parameter};
use crate::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NcdsConfig {
    /// Dimension the dynamics live in (the field maps `ℝᵐ → ℝᵐ`).
    pub latent_dim: usize,
    /// Hidden width of the Jacobian-factor network.
    pub hidden: usize,
    /// Uniform contraction margin: `λ_max(Df) ≤ -ε`.
    pub epsilon: f64,
    /// Number of trapezoid nodes on the segment `[x₀, z]`.
    pub quadrature: usize,
}

impl NcdsConfig {
    pub fn with_dim(latent_dim: usize) -> NcdsConfig {
        NcdsConfig {
            latent_dim,
            hidden: 16,
            epsilon: 0.01,
            quadrature: 32,
        }
    }

    pub fn validate(&self) -> crate::Result<()> {
        if self.latent_dim == 0 {
            return Err(crate::Error::Config("latent_dim must be positive".into()));
        }
        if self.epsilon <= 0.0 {
            return Err(crate::Error::Config(format!(
                "contraction margin epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if self.quadrature < 2 {
            return Err(crate::Error::Config(format!(
                "trapezoid rule needs at least 2 nodes, got {}",
                self.quadrature
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct NcdsModel {
    config: NcdsConfig,
    /// Maps `z` to the flattened `m×m` factor `J_θ(z)`.
    jac_net: Mlp,
    /// Anchor point `x₀` where the field value is known.
    anchor_point: Parameter,
    /// Field value `v₀` at the anchor.
    anchor_velocity: Parameter,
}

impl NcdsModel {
    pub fn new(config: NcdsConfig, prefix: &str, rng: &mut ChaCha8Rng) -> NcdsModel {
        let m = config.latent_dim;
        let h = config.hidden;
        NcdsModel {
            jac_net: Mlp::new(&format!("{prefix}.jac"), &[m, h, h, m * m], false, rng),
            anchor_point: Parameter::new(format!("{prefix}.x0"), Tensor::zeros(&[m])),
            anchor_velocity: Parameter::new(format!("{prefix}.v0"), Tensor::zeros(&[m])),
            config,
        }
    }

    pub fn config(&self) -> &NcdsConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.config.latent_dim
    }

    pub fn anchor_point(&self) -> &[f64] {
        self.anchor_point.value().data()
    }

    pub fn anchor_velocity(&self) -> &[f64] {
        self.anchor_velocity.value().data()
    }

    /// Pin the anchor to an observed state/velocity pair (typically the
    /// first sample of the first demonstration).
    pub fn set_anchor(&mut self, point: &[f64], velocity: &[f64]) {
        let m = self.config.latent_dim;
        assert_eq!(point.len(), m, "anchor point dimension");
        assert_eq!(velocity.len(), m, "anchor velocity dimension");
        self.anchor_point.set_value(Tensor::vector(point));
        self.anchor_velocity.set_value(Tensor::vector(velocity));
    }

    /// The field's Jacobian `Df(z) = -(JᵀJ + εI)`: symmetric, with every
    /// eigenvalue at most `-ε`.
    pub fn jacobian_df_f64(&self, z: &[f64]) -> Tensor {
        let m = self.config.latent_dim;
        let j_flat = self.jac_net.forward_f64(z);
        let j = Tensor::matrix(m, m, j_flat);
        let mut df = j.transposed().matmul_value(&j);
        for i in 0..m {
            let v = df.get(i, i) + self.config.epsilon;
            df.set(i, i, v);
        }
        df.scale_in_place(-1.0);
        df
    }

    fn jacobian_df_tape(&self, tape: &Tape, z: Var) -> Var {
        let m = self.config.latent_dim;
        let j = tape.reshape(self.jac_net.forward(tape, z), &[m, m]);
        let gram = tape.matmul(tape.transpose(j), j);
        tape.neg(tape.add(gram, tape.scale(tape.eye(m), self.config.epsilon)))
    }

    /// Field value by trapezoid integration of `Df` along `[x₀, z]`.
    pub fn field_f64(&self, z: &[f64]) -> Vec<f64> {
        let m = self.config.latent_dim;
        let n = self.config.quadrature;
        let x0 = self.anchor_point.value().data();
        let v0 = self.anchor_velocity.value().data();
        let delta: Vec<f64> = z.iter().zip(x0).map(|(a, b)| a - b).collect();
        let h = 1.0 / (n - 1) as f64;
        let mut acc = vec![0.0; m];
        let mut xi = vec![0.0; m];
        for i in 0..n {
            let t = i as f64 / (n - 1) as f64;
            for k in 0..m {
                xi[k] = x0[k] + t * delta[k];
            }
            let df = self.jacobian_df_f64(&xi);
            let w = if i == 0 || i == n - 1 { 0.5 * h } else { h };
            let contrib = df.matvec_value(&delta);
            for k in 0..m {
                acc[k] += w * contrib[k];
            }
        }
        (0..m).map(|k| v0[k] + acc[k]).collect()
    }

    /// Tape-recorded twin of [`field_f64`], differentiable in both `z` and
    /// all parameters (anchor included).
    pub fn field_tape(&self, tape: &Tape, z: Var) -> Var {
        let n = self.config.quadrature;
        let x0 = tape.param(&self.anchor_point);
        let v0 = tape.param(&self.anchor_velocity);
        let delta = tape.sub(z, x0);
        let h = 1.0 / (n - 1) as f64;
        let mut acc: Option<Var> = None;
        for i in 0..n {
            let t = i as f64 / (n - 1) as f64;
            let xi = tape.add(x0, tape.scale(delta, t));
            let df = self.jacobian_df_tape(tape, xi);
            let w = if i == 0 || i == n - 1 { 0.5 * h } else { h };
            let contrib = tape.scale(tape.matvec(df, delta), w);
            acc = Some(match acc {
                None => contrib,
                Some(a) => tape.add(a, contrib),
            });
        }
        tape.add(v0, acc.expect("at least two quadrature nodes"))
    }
}

impl HasParams for NcdsModel {
    fn visit_params(&self, f: &mut dyn FnMut(&Parameter)) {
        self.jac_net.visit_params(f);
        f(&self.anchor_point);
        f(&self.anchor_velocity);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        self.jac_net.visit_params_mut(f);
        f(&mut self.anchor_point);
        f(&mut self.anchor_velocity);
    }
}
