//! Coupling layers: half the coordinates pass through unchanged and
//! parameterize monotone splines applied to the other half, which makes the
//! layer invertible in closed form regardless of how expressive the
//! conditioning network is.

use rand_chacha::ChaCha8Rng;

use super::spline::SplineSpec;
use crate::autodiff::{Tape, Var};
use crate::nn::{HasParams, Linear, Parameter};

/// Residual conditioning network: a linear input projection, two residual
/// blocks `h <- h + W2 tanh(W1 h)`, and a zero-initialized output layer so a
/// fresh coupling layer is exactly the identity.
#[derive(Clone, Debug)]
pub struct Conditioner {
    input: Linear,
    blocks: Vec<(Linear, Linear)>,
    output: Linear,
}

impl Conditioner {
    pub fn new(
        prefix: &str,
        in_dim: usize,
        hidden: usize,
        out_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Conditioner {
        let blocks = (0..2)
            .map(|i| {
                (
                    Linear::new(&format!("{prefix}.block{i}.a"), hidden, hidden, rng),
                    Linear::new(&format!("{prefix}.block{i}.b"), hidden, hidden, rng),
                )
            })
            .collect();
        Conditioner {
            input: Linear::new(&format!("{prefix}.input"), in_dim, hidden, rng),
            blocks,
            output: Linear::zeroed(&format!("{prefix}.output"), hidden, out_dim),
        }
    }

    pub fn forward(&self, tape: &Tape, x: Var) -> Var {
        let mut h = self.input.forward(tape, x);
        for (a, b) in &self.blocks {
            let t = b.forward(tape, tape.tanh(a.forward(tape, h)));
            h = tape.add(h, t);
        }
        self.output.forward(tape, h)
    }

    pub fn forward_f64(&self, x: &[f64]) -> Vec<f64> {
        let mut h = self.input.forward_f64(x);
        for (a, b) in &self.blocks {
            let mut t = a.forward_f64(&h);
            for v in &mut t {
                *v = v.tanh();
            }
            let t = b.forward_f64(&t);
            for (hi, ti) in h.iter_mut().zip(&t) {
                *hi += ti;
            }
        }
        self.output.forward_f64(&h)
    }
}

impl HasParams for Conditioner {
    fn visit_params(&self, f: &mut dyn FnMut(&Parameter)) {
        self.input.visit_params(f);
        for (a, b) in &self.blocks {
            a.visit_params(f);
            b.visit_params(f);
        }
        self.output.visit_params(f);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        self.input.visit_params_mut(f);
        for (a, b) in &mut self.blocks {
            a.visit_params_mut(f);
            b.visit_params_mut(f);
        }
        self.output.visit_params_mut(f);
    }
}

#[derive(Clone, Debug)]
pub struct CouplingLayer {
    dim: usize,
    /// Leading coordinates that pass through and condition the rest.
    split: usize,
    spline: SplineSpec,
    conditioner: Conditioner,
}

impl CouplingLayer {
    pub fn new(
        prefix: &str,
        dim: usize,
        hidden: usize,
        spline: SplineSpec,
        rng: &mut ChaCha8Rng,
    ) -> CouplingLayer {
        assert!(dim >= 2, "coupling layer needs at least two coordinates");
        let split = dim / 2;
        let out_dim = (dim - split) * spline.param_count();
        CouplingLayer {
            dim,
            split,
            spline,
            conditioner: Conditioner::new(&format!("{prefix}.cond"), split, hidden, out_dim, rng),
        }
    }

    pub fn forward_tape(&self, tape: &Tape, x: Var) -> Var {
        let pc = self.spline.param_count();
        let xa = tape.slice(x, 0, self.split);
        let theta = self.conditioner.forward(tape, xa);
        let mut parts = vec![xa];
        for j in 0..self.dim - self.split {
            let x_j = tape.slice(x, self.split + j, 1);
            let th_j = tape.slice(theta, j * pc, pc);
            parts.push(self.spline.forward_tape(tape, x_j, th_j));
        }
        tape.concat(&parts)
    }

    pub fn forward_f64(&self, x: &[f64]) -> Vec<f64> {
        let pc = self.spline.param_count();
        let theta = self.conditioner.forward_f64(&x[..self.split]);
        let mut y = x[..self.split].to_vec();
        for j in 0..self.dim - self.split {
            y.push(
                self.spline
                    .forward_f64(x[self.split + j], &theta[j * pc..(j + 1) * pc]),
            );
        }
        y
    }

    pub fn inverse_f64(&self, y: &[f64]) -> Vec<f64> {
        let pc = self.spline.param_count();
        let theta = self.conditioner.forward_f64(&y[..self.split]);
        let mut x = y[..self.split].to_vec();
        for j in 0..self.dim - self.split {
            x.push(
                self.spline
                    .inverse_f64(y[self.split + j], &theta[j * pc..(j + 1) * pc]),
            );
        }
        x
    }

    /// Jacobian determinant at `x`: the layer's Jacobian is block triangular
    /// with an identity block, so this is the product of the per-coordinate
    /// spline derivatives. Always positive.
    pub fn jacobian_determinant_f64(&self, x: &[f64]) -> f64 {
        let pc = self.spline.param_count();
        let theta = self.conditioner.forward_f64(&x[..self.split]);
        let mut det = 1.0;
        for j in 0..self.dim - self.split {
            det *= self
                .spline
                .derivative_f64(x[self.split + j], &theta[j * pc..(j + 1) * pc]);
        }
        det
    }
}

impl HasParams for CouplingLayer {
    fn visit_params(&self, f: &mut dyn FnMut(&Parameter)) {
        self.conditioner.visit_params(f);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        self.conditioner.visit_params_mut(f);
    }
}
