//! Linear flow layers: fixed coordinate permutations plus learnable
//! invertible affine maps parameterized directly in LU form, so the
//! determinant never vanishes and the inverse is two triangular solves.

use crate::autodiff::{Tape, Tensor, Var};
use crate::linalg::{solve_unit_lower, solve_upper};
use crate::nn::{HasParams, Parameter};

// ── Permutation ─────────────────────────────────────────────────────────────

/// Exact coordinate reorder `y[i] = x[perm[i]]`; costs no arithmetic and is
/// its own kind of unit-Jacobian layer.
#[derive(Clone, Debug)]
pub struct Permutation {
    perm: Vec<usize>,
    inverse: Vec<usize>,
}

impl Permutation {
    pub fn new(perm: Vec<usize>) -> Permutation {
        let mut inverse = vec![0; perm.len()];
        let mut seen = vec![false; perm.len()];
        for (i, &p) in perm.iter().enumerate() {
            assert!(p < perm.len() && !seen[p], "invalid permutation {perm:?}");
            seen[p] = true;
            inverse[p] = i;
        }
        Permutation { perm, inverse }
    }

    /// Reverse the coordinate order.
    pub fn reversal(dim: usize) -> Permutation {
        Permutation::new((0..dim).rev().collect())
    }

    /// Rotate so the second half leads: `[k..d, 0..k]` with `k = d / 2`.
    pub fn half_swap(dim: usize) -> Permutation {
        let k = dim / 2;
        Permutation::new((k..dim).chain(0..k).collect())
    }

    pub fn indices(&self) -> &[usize] {
        &self.perm
    }

    /// The permutation undoing `self` (and, composed after `others` applied
    /// in order, undoing the whole chain).
    pub fn inverse_of_chain(chain: &[&Permutation]) -> Permutation {
        let dim = chain
            .first()
            .map(|p| p.perm.len())
            .expect("empty permutation chain");
        // Applying p maps x -> x[p[i]]; applying the chain in order composes
        // index maps as c[i] = p_first[... p_last[i]].
        let mut c: Vec<usize> = (0..dim).collect();
        for p in chain.iter().rev() {
            c = c.iter().map(|&i| p.perm[i]).collect();
        }
        let combined = Permutation::new(c);
        Permutation::new(combined.inverse)
    }

    pub fn forward_tape(&self, tape: &Tape, x: Var) -> Var {
        tape.permute(x, &self.perm)
    }

    pub fn forward_f64(&self, x: &[f64]) -> Vec<f64> {
        self.perm.iter().map(|&p| x[p]).collect()
    }

    pub fn inverse_f64(&self, y: &[f64]) -> Vec<f64> {
        self.inverse.iter().map(|&p| y[p]).collect()
    }

    /// Determinant of the permutation matrix: +1 or -1 by cycle parity.
    pub fn parity(&self) -> f64 {
        let mut seen = vec![false; self.perm.len()];
        let mut sign = 1.0;
        for start in 0..self.perm.len() {
            if seen[start] {
                continue;
            }
            let mut len = 0;
            let mut i = start;
            while !seen[i] {
                seen[i] = true;
                i = self.perm[i];
                len += 1;
            }
            if len % 2 == 0 {
                sign = -sign;
            }
        }
        sign
    }
}

// ── Invertible affine ───────────────────────────────────────────────────────

/// `y = L U x + b` with `L` unit lower triangular, `U` upper triangular with
/// `exp(log_diag)` on the diagonal. All parameters start at zero, which makes
/// the layer exactly the identity, and the exponential keeps `det = exp(sum
/// log_diag)` positive for every parameter value.
#[derive(Clone, Debug)]
pub struct InvertibleLinear {
    dim: usize,
    lower: Parameter,
    upper: Parameter,
    log_diag: Parameter,
    bias: Parameter,
}

fn strict_lower_mask(d: usize) -> Tensor {
    Tensor::from_fn(&[d, d], |idx| if idx / d > idx % d { 1.0 } else { 0.0 })
}

fn strict_upper_mask(d: usize) -> Tensor {
    Tensor::from_fn(&[d, d], |idx| if idx / d < idx % d { 1.0 } else { 0.0 })
}

impl InvertibleLinear {
    pub fn new(prefix: &str, dim: usize) -> InvertibleLinear {
        InvertibleLinear {
            dim,
            lower: Parameter::new(format!("{prefix}.lower"), Tensor::zeros(&[dim, dim])),
            upper: Parameter::new(format!("{prefix}.upper"), Tensor::zeros(&[dim, dim])),
            log_diag: Parameter::new(format!("{prefix}.log_diag"), Tensor::zeros(&[dim])),
            bias: Parameter::new(format!("{prefix}.bias"), Tensor::zeros(&[dim])),
        }
    }

    /// Assemble `L` and `U` at the value level (mirrors the tape assembly).
    fn factors_f64(&self) -> (Tensor, Tensor) {
        let d = self.dim;
        let lmask = strict_lower_mask(d);
        let umask = strict_upper_mask(d);
        let mut l = Tensor::zeros(&[d, d]);
        let mut u = Tensor::zeros(&[d, d]);
        let e: Vec<f64> = self.log_diag.value().data().iter().map(|&v| v.exp()).collect();
        for i in 0..d * d {
            let eye = if i / d == i % d { 1.0 } else { 0.0 };
            let diag = if i / d == i % d { e[i / d] } else { 0.0 };
            l.data_mut()[i] = self.lower.value().data()[i] * lmask.data()[i] + eye;
            u.data_mut()[i] = self.upper.value().data()[i] * umask.data()[i] + diag;
        }
        (l, u)
    }

    pub fn forward_tape(&self, tape: &Tape, x: Var) -> Var {
        let d = self.dim;
        let l = tape.add(
            tape.mul(tape.param(&self.lower), tape.constant(strict_lower_mask(d))),
            tape.constant(Tensor::eye(d)),
        );
        let e = tape.exp(tape.param(&self.log_diag));
        // Embed exp(log_diag) on the diagonal: interleave each entry with a
        // length-d run of zeros, then reshape; entry i lands at (i, i).
        let zeros_run = tape.constant(Tensor::zeros(&[d]));
        let mut parts = Vec::with_capacity(2 * d - 1);
        for i in 0..d {
            parts.push(tape.slice(e, i, 1));
            if i + 1 < d {
                parts.push(zeros_run);
            }
        }
        let diag = tape.reshape(tape.concat(&parts), &[d, d]);
        let u = tape.add(
            tape.mul(tape.param(&self.upper), tape.constant(strict_upper_mask(d))),
            diag,
        );
        let w = tape.matmul(l, u);
        tape.add(tape.matvec(w, x), tape.param(&self.bias))
    }

    pub fn forward_f64(&self, x: &[f64]) -> Vec<f64> {
        let (l, u) = self.factors_f64();
        let w = l.matmul_value(&u);
        let mut y = w.matvec_value(x);
        for (yi, bi) in y.iter_mut().zip(self.bias.value().data()) {
            *yi += bi;
        }
        y
    }

    pub fn inverse_f64(&self, y: &[f64]) -> Vec<f64> {
        let (l, u) = self.factors_f64();
        let t: Vec<f64> = y
            .iter()
            .zip(self.bias.value().data())
            .map(|(&yi, &bi)| yi - bi)
            .collect();
        solve_upper(&u, &solve_unit_lower(&l, &t))
    }

    /// `det(L U) = exp(sum log_diag)`; positive for every parameter value.
    pub fn determinant(&self) -> f64 {
        self.log_diag.value().data().iter().sum::<f64>().exp()
    }

    /// Set the layer to represent a specific matrix given through its LU
    /// factors (strictly lower part of `L`, strictly upper part of `U`,
    /// diagonal of `U` as logs) and bias. Entries outside the respective
    /// triangles are ignored by construction.
    pub fn set_factors(&mut self, lower: &Tensor, upper: &Tensor, log_diag: &[f64], bias: &[f64]) {
        self.lower.set_value(lower.clone());
        self.upper.set_value(upper.clone());
        self.log_diag.set_value(Tensor::vector(log_diag));
        self.bias.set_value(Tensor::vector(bias));
    }
}

impl HasParams for InvertibleLinear {
    fn visit_params(&self, f: &mut dyn FnMut(&Parameter)) {
        f(&self.lower);
        f(&self.upper);
        f(&self.log_diag);
        f(&self.bias);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        f(&mut self.lower);
        f(&mut self.upper);
        f(&mut self.log_diag);
        f(&mut self.bias);
    }
}
