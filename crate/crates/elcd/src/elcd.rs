//! The contracting vector-field model.
//!
//! `f(x) = A(x, x*) (x - x*)` where the state-dependent matrix is assembled
//! as `A = -P_s^T P_s + P_a - P_a^T - alpha I` from two small matrix-valued
//! networks. The first term is negative semidefinite for any network output,
//! the middle pair is skew-symmetric, and the last term shifts the symmetric
//! part to at most `-alpha`. Consequences, true at every parameter setting:
//!
//! * `f(x*) = 0` exactly (bit-level: the matrix multiplies a zero vector);
//! * `lambda_max(sym A(x)) <= -alpha` everywhere, so every trajectory obeys
//!   `|x(t) - x*| <= e^{-alpha t} |x(0) - x*|`;
//! * with zero-initialized final network layers the model starts at exactly
//!   `f(x) = -alpha (x - x*)`.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::nn::{HasParams, Mlp, Parameter};

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ElcdConfig {
    /// State dimension d.
    pub dim: usize,
    /// Contraction rate floor alpha > 0.
    pub alpha: f64,
    /// Hidden width of the two matrix networks.
    pub hidden: usize,
}

impl Default for ElcdConfig {
    fn default() -> Self {
        ElcdConfig {
            dim: 2,
            alpha: 0.05,
            hidden: 16,
        }
    }
}

impl ElcdConfig {
    pub fn with_dim(dim: usize) -> Self {
        ElcdConfig {
            dim,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> crate::Result<()> {
        if self.dim == 0 {
            return Err(crate::Error::Config("state dimension must be positive".into()));
        }
        if !(self.alpha > 0.0) {
            return Err(crate::Error::Config(format!(
                "contraction rate alpha must be positive, got {}",
                self.alpha
            )));
        }
        if self.hidden == 0 {
            return Err(crate::Error::Config("hidden width must be positive".into()));
        }
        Ok(())
    }
}

/// A network mapping `concat(x, x*)` to a d x d matrix.
#[derive(Clone, Debug)]
pub struct MatrixNet {
    net: Mlp,
    dim: usize,
}

impl MatrixNet {
    fn new(prefix: &str, dim: usize, hidden: usize, rng: &mut ChaCha8Rng) -> MatrixNet {
        MatrixNet {
            net: Mlp::new(prefix, &[2 * dim, hidden, hidden, dim * dim], true, rng),
            dim,
        }
    }

    /// Evaluate to a `[d, d]` tape value given the pre-concatenated input.
    pub fn forward(&self, tape: &Tape, xx: Var) -> Var {
        let flat = self.net.forward(tape, xx);
        tape.reshape(flat, &[self.dim, self.dim])
    }

    pub fn forward_f64(&self, xx: &[f64]) -> Tensor {
        Tensor::new(vec![self.dim, self.dim], self.net.forward_f64(xx))
    }
}

impl HasParams for MatrixNet {
    fn visit_params(&self, f: &mut dyn FnMut(&Parameter)) {
        self.net.visit_params(f);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        self.net.visit_params_mut(f);
    }
}

#[derive(Clone, Debug)]
pub struct ElcdModel {
    config: ElcdConfig,
    p_s: MatrixNet,
    p_a: MatrixNet,
    /// Equilibrium used when the model is evaluated standalone (in composed
    /// models the latent equilibrium is supplied per evaluation instead).
    equilibrium: Parameter,
}

impl ElcdModel {
    /// Build with zero-initialized final layers: the initial field is exactly
    /// `-alpha (x - x*)`.
    pub fn new(config: ElcdConfig, prefix: &str, rng: &mut ChaCha8Rng) -> ElcdModel {
        config.validate().expect("invalid ELCD config");
        let d = config.dim;
        ElcdModel {
            p_s: MatrixNet::new(&format!("{prefix}.p_s"), d, config.hidden, rng),
            p_a: MatrixNet::new(&format!("{prefix}.p_a"), d, config.hidden, rng),
            equilibrium: Parameter::frozen(format!("{prefix}.x_star"), Tensor::zeros(&[d])),
            config,
        }
    }

    pub fn config(&self) -> &ElcdConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn alpha(&self) -> f64 {
        self.config.alpha
    }

    pub fn equilibrium(&self) -> &Parameter {
        &self.equilibrium
    }

    pub fn equilibrium_mut(&mut self) -> &mut Parameter {
        &mut self.equilibrium
    }

    pub fn set_equilibrium(&mut self, x_star: &[f64]) {
        self.equilibrium.set_value(Tensor::vector(x_star));
    }

    /// Mark the equilibrium as a trainable parameter.
    pub fn set_equilibrium_trainable(&mut self, trainable: bool) {
        self.equilibrium.set_trainable(trainable);
    }

    fn check_dim(&self, context: &'static str, len: usize) {
        assert_eq!(
            len,
            self.config.dim,
            "{context}: shape mismatch [{len}] vs [{}]",
            self.config.dim
        );
    }

    // ── Tape evaluation ─────────────────────────────────────────────────────

    /// The extended-linearization matrix `A(x, x*)` as a `[d, d]` tape value.
    pub fn a_matrix(&self, tape: &Tape, x: Var, x_star: Var) -> Var {
        let d = self.config.dim;
        self.check_dim("a_matrix x", tape.shape(x)[0]);
        self.check_dim("a_matrix x_star", tape.shape(x_star)[0]);
        let xx = tape.concat(&[x, x_star]);
        let p_s = self.p_s.forward(tape, xx);
        let p_a = self.p_a.forward(tape, xx);
        let sym = tape.neg(tape.matmul(tape.transpose(p_s), p_s));
        let skew = tape.sub(p_a, tape.transpose(p_a));
        let alpha_eye = {
            let mut m = Tensor::eye(d);
            m.scale_in_place(self.config.alpha);
            tape.constant(m)
        };
        tape.sub(tape.add(sym, skew), alpha_eye)
    }

    /// The vector field `A(x, x*)(x - x*)` as a tape value.
    pub fn vector_field(&self, tape: &Tape, x: Var, x_star: Var) -> Var {
        let a = self.a_matrix(tape, x, x_star);
        tape.matvec(a, tape.sub(x, x_star))
    }

    /// Standalone evaluation against the stored equilibrium.
    pub fn vector_field_standalone(&self, tape: &Tape, x: Var) -> Var {
        let x_star = tape.param(&self.equilibrium);
        self.vector_field(tape, x, x_star)
    }

    // ── Value-only evaluation ───────────────────────────────────────────────
    //
    // Mirrors the tape assembly operation for operation so both paths agree
    // bit-for-bit; rollout-heavy verification uses this path.

    pub fn a_matrix_f64(&self, x: &[f64], x_star: &[f64]) -> Tensor {
        let d = self.config.dim;
        self.check_dim("a_matrix x", x.len());
        self.check_dim("a_matrix x_star", x_star.len());
        let mut xx = Vec::with_capacity(2 * d);
        xx.extend_from_slice(x);
        xx.extend_from_slice(x_star);
        let p_s = self.p_s.forward_f64(&xx);
        let p_a = self.p_a.forward_f64(&xx);
        let mut sym = p_s.transposed().matmul_value(&p_s);
        for v in sym.data_mut() {
            *v = -*v;
        }
        let p_a_t = p_a.transposed();
        let mut a = Tensor::zeros(&[d, d]);
        for i in 0..d * d {
            a.data_mut()[i] = (sym.data()[i] + (p_a.data()[i] - p_a_t.data()[i]))
                - if i % d == i / d { self.config.alpha } else { 0.0 };
        }
        a
    }

    pub fn field_f64(&self, x: &[f64], x_star: &[f64]) -> Vec<f64> {
        let a = self.a_matrix_f64(x, x_star);
        let diff: Vec<f64> = x.iter().zip(x_star).map(|(&a, &b)| a - b).collect();
        a.matvec_value(&diff)
    }

    /// Standalone value evaluation against the stored equilibrium.
    pub fn field_standalone_f64(&self, x: &[f64]) -> Vec<f64> {
        self.field_f64(x, self.equilibrium.value().data())
    }

    /// Exact Jacobian of the standalone field at `x` (value-level), via one
    /// tangent pass per coordinate.
    pub fn jacobian_f64(&self, x: &[f64]) -> Tensor {
        let tape = Tape::new();
        let xv = tape.constant(Tensor::vector(x));
        let f = self.vector_field_standalone(&tape, xv);
        let j = tape.jacobian(xv, f);
        tape.value(j)
    }

    /// True while the final layer of the symmetric-factor network `P_s` is
    /// identically zero, i.e. `P_s(x, x*) = 0` for every input.
    ///
    /// That configuration is an exact saddle of any loss built on the field:
    /// the Gram term `-P_s^T P_s` has zero derivative wherever `P_s = 0`, so
    /// backpropagation returns exactly zero for every parameter of the
    /// network (the zero final weights also block gradients into the hidden
    /// layers). Gradient steps therefore never move the symmetric part of
    /// `A` away from `-alpha I` unless the factor is woken first.
    pub fn symmetric_factor_is_dormant(&self) -> bool {
        let mut dormant = true;
        self.p_s.visit_params(&mut |p| {
            if p.name().ends_with(".layer2.w") || p.name().ends_with(".layer2.b") {
                if p.value().data().iter().any(|&a| a != 0.0) {
                    dormant = false;
                }
            }
        });
        dormant
    }

    /// Give the final layer of `P_s` small uniform values in `(-scale, scale)`
    /// so that its parameters leave the zero-gradient saddle (see
    /// [`ElcdModel::symmetric_factor_is_dormant`]). Contraction holds for any
    /// parameter values, so this only perturbs the field slightly (the `A`
    /// matrix changes by `O(scale^2)`); the trainer calls it automatically.
    pub fn wake_symmetric_factor(&mut self, scale: f64, rng: &mut ChaCha8Rng) {
        use rand::Rng;
        self.p_s.visit_params_mut(&mut |p| {
            if p.name().ends_with(".layer2.w") || p.name().ends_with(".layer2.b") {
                let shape = p.value().shape().to_vec();
                p.set_value(Tensor::from_fn(&shape, |_| rng.gen_range(-scale..scale)));
            }
        });
    }
}

impl HasParams for ElcdModel {
    fn visit_params(&self, f: &mut dyn FnMut(&Parameter)) {
        self.p_s.visit_params(f);
        self.p_a.visit_params(f);
        f(&self.equilibrium);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        self.p_s.visit_params_mut(f);
        self.p_a.visit_params_mut(f);
        f(&mut self.equilibrium);
    }
}

/// Give all parameters of a freshly built model nonzero random values
/// (including the normally zero-initialized final layers). Used by tests and
/// verification sweeps that need a "generic" model rather than the identity
/// start.
pub fn randomize_params<M: HasParams>(model: &mut M, scale: f64, rng: &mut ChaCha8Rng) {
    use rand::Rng;
    model.visit_params_mut(&mut |p| {
        if p.trainable() {
            let shape = p.value().shape().to_vec();
            p.set_value(Tensor::from_fn(&shape, |_| rng.gen_range(-scale..scale)));
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{finite_diff_check_params, DEFAULT_FD_STEP};
    use crate::linalg::symmetric_eigenvalue_max;
    use rand::{Rng, SeedableRng};

    fn random_model(dim: usize, seed: u64) -> (ElcdModel, ChaCha8Rng) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = ElcdModel::new(ElcdConfig::with_dim(dim), "elcd", &mut rng);
        randomize_params(&mut m, 0.4, &mut rng);
        (m, rng)
    }

    #[test]
    fn zero_init_field_is_minus_alpha_times_offset() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = ElcdModel::new(ElcdConfig::with_dim(3), "elcd", &mut rng);
        let x = [0.7, -1.3, 2.1];
        let f = m.field_standalone_f64(&x);
        for (fi, xi) in f.iter().zip(&x) {
            assert_eq!(*fi, -0.05 * xi);
        }
        let a = m.a_matrix_f64(&x, &[0.0; 3]);
        let mut expect = Tensor::eye(3);
        expect.scale_in_place(-0.05);
        assert_eq!(a.data(), expect.data());
    }

    #[test]
    fn field_vanishes_at_equilibrium_bitwise() {
        let (mut m, mut rng) = random_model(4, 42);
        for _ in 0..10 {
            let xs: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
            m.set_equilibrium(&xs);
            let f = m.field_standalone_f64(&xs);
            assert!(f.iter().all(|&v| v == 0.0), "field at x* must be exactly zero");
        }
    }

    #[test]
    fn symmetric_part_stays_below_minus_alpha() {
        for seed in 0..5 {
            let (m, mut rng) = random_model(3, seed);
            for _ in 0..200 {
                let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-3.0..3.0)).collect();
                let a = m.a_matrix_f64(&x, &[0.1, -0.2, 0.3]);
                let lmax = symmetric_eigenvalue_max(&a);
                assert!(
                    lmax <= -m.alpha() + 1e-10,
                    "lambda_max(sym A) = {lmax} exceeds -alpha"
                );
            }
        }
    }

    #[test]
    fn tape_and_value_paths_agree_bitwise() {
        let (m, mut rng) = random_model(3, 7);
        for _ in 0..20 {
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let xs: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let tape = Tape::new();
            let xv = tape.constant(Tensor::vector(&x));
            let sv = tape.constant(Tensor::vector(&xs));
            let f_tape = tape.value(m.vector_field(&tape, xv, sv));
            let f_val = m.field_f64(&x, &xs);
            for (a, b) in f_tape.data().iter().zip(&f_val) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let (m, _) = random_model(3, 13);
        let x = [0.4, -0.8, 1.2];
        let j = m.jacobian_f64(&x);
        let h = 1e-5;
        for col in 0..3 {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[col] += h;
            xm[col] -= h;
            let fp = m.field_standalone_f64(&xp);
            let fm = m.field_standalone_f64(&xm);
            for row in 0..3 {
                let fd = (fp[row] - fm[row]) / (2.0 * h);
                let err = (j.get(row, col) - fd).abs() / fd.abs().max(1.0);
                assert!(err <= 1e-6, "jacobian ({row},{col}): ad {} fd {fd}", j.get(row, col));
            }
        }
    }

    #[test]
    fn parameter_gradients_match_finite_differences() {
        let (mut m, mut rng) = random_model(2, 99);
        let x = Tensor::vector(&[0.6, -0.9]);
        let target = Tensor::vector(&[0.2, 0.1]);
        let err = finite_diff_check_params(
            &mut m,
            |tape, model| {
                let xv = tape.constant(x.clone());
                let f = model.vector_field_standalone(tape, xv);
                let diff = tape.sub(f, tape.constant(target.clone()));
                tape.sum(tape.square(diff))
            },
            DEFAULT_FD_STEP,
            Some(4),
            &mut rng,
        );
        assert!(err <= 1e-6, "max rel err {err}");
    }

    #[test]
    #[should_panic(expected = "shape mismatch [2] vs [3]")]
    fn dimension_mismatch_panics() {
        let (m, _) = random_model(3, 1);
        let _ = m.field_f64(&[1.0, 2.0], &[0.0, 0.0, 0.0]);
    }
}
