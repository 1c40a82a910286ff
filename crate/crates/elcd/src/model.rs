//! Composition of an invertible feature map with latent dynamics.
//!
//! A [`ComposedModel`] predicts data-space velocity by conjugation: map the
//! state through the diffeomorphism, evaluate the latent field there, and
//! pull the result back through the Jacobian,
//!
//! ```text
//! ẋ = Dφ(x)⁻¹ f(φ(x))       with latent equilibrium z* = φ(x*).
//! ```
//!
//! `z*` is recomputed from the frozen data-space equilibrium `x*` on every
//! evaluation, so gradients flow through `φ(x*)` and the composed field
//! keeps `ẋ(x*) = 0` exactly at every parameter setting — conjugation
//! preserves both the equilibrium and any latent contraction certificate.
//!
//! The latent field is interchangeable: the contracting
//! extended-linearization model, either comparison baseline, or the fixed
//! unit descent. The projection baseline operates directly in data space
//! (no diffeomorphism); the negative-definite-Jacobian baseline lives in a
//! lower-dimensional latent space reached by zero-padding.

use std::fmt;
use std::str::FromStr;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::baselines::{DescentField, NcdsConfig, NcdsModel, SddConfig, SddModel};
use crate::elcd::{ElcdConfig, ElcdModel};
use crate::flows::{pad_tape, unpad, unpad_tape, DiffeoStack, FlowConfig};
use crate::nn::{HasParams, Parameter};
use crate::{Error, Result, Tensor};

// ── Model kind ──────────────────────────────────────────────────────────────

/// Which dynamics family a composed model carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Extended linearization in latent space (the primary model).
    Elcd,
    /// Negative-definite-Jacobian field integrated from an anchor.
    Ncds,
    /// Lyapunov-projected unconstrained field, data space only.
    Sdd,
    /// Fixed unit descent pulled back through the flow.
    Eflow,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [
        ModelKind::Elcd,
        ModelKind::Ncds,
        ModelKind::Sdd,
        ModelKind::Eflow,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Elcd => "elcd",
            ModelKind::Ncds => "ncds",
            ModelKind::Sdd => "sdd",
            ModelKind::Eflow => "eflow",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<ModelKind> {
        match s {
            "elcd" => Ok(ModelKind::Elcd),
            "ncds" => Ok(ModelKind::Ncds),
            "sdd" => Ok(ModelKind::Sdd),
            "eflow" => Ok(ModelKind::Eflow),
            other => Err(Error::Config(format!(
                "unknown model kind '{other}' (expected elcd, ncds, sdd, or eflow)"
            ))),
        }
    }
}

// ── Configuration ───────────────────────────────────────────────────────────

/// Full configuration of a composed model. All sub-configurations are
/// carried regardless of kind so the serialized form is total; only the
/// relevant ones are consulted when building.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Data-space dimension.
    pub dim: usize,
    pub flow: FlowConfig,
    pub elcd: ElcdConfig,
    pub ncds: NcdsConfig,
    pub sdd: SddConfig,
    /// Clamp radius of the unit-descent latent field.
    pub descent_delta: f64,
}

impl ModelConfig {
    pub fn new(kind: ModelKind, dim: usize) -> ModelConfig {
        ModelConfig {
            kind,
            dim,
            flow: FlowConfig::with_dim(dim),
            elcd: ElcdConfig::with_dim(dim),
            ncds: NcdsConfig::with_dim(dim.min(2)),
            sdd: SddConfig::with_dim(dim),
            descent_delta: crate::baselines::eflow::DEFAULT_DELTA,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Config("model dimension must be positive".into()));
        }
        match self.kind {
            ModelKind::Elcd => {
                self.flow.validate()?;
                self.elcd.validate()?;
                if self.flow.dim != self.dim || self.elcd.dim != self.dim {
                    return Err(Error::Config(format!(
                        "flow ({}) and latent ({}) dimensions must equal the data dimension {}",
                        self.flow.dim, self.elcd.dim, self.dim
                    )));
                }
            }
            ModelKind::Ncds => {
                self.flow.validate()?;
                self.ncds.validate()?;
                if self.flow.dim != self.dim {
                    return Err(Error::Config(format!(
                        "flow dimension {} must equal the data dimension {}",
                        self.flow.dim, self.dim
                    )));
                }
                if self.ncds.latent_dim > self.dim {
                    return Err(Error::Config(format!(
                        "latent dimension {} exceeds the data dimension {}",
                        self.ncds.latent_dim, self.dim
                    )));
                }
            }
            ModelKind::Sdd => {
                if self.sdd.dim != self.dim {
                    return Err(Error::Config(format!(
                        "projection model dimension {} must equal the data dimension {}",
                        self.sdd.dim, self.dim
                    )));
                }
            }
            ModelKind::Eflow => {
                self.flow.validate()?;
                if self.flow.dim != self.dim {
                    return Err(Error::Config(format!(
                        "flow dimension {} must equal the data dimension {}",
                        self.flow.dim, self.dim
                    )));
                }
                if !(self.descent_delta > 0.0) {
                    return Err(Error::Config(format!(
                        "descent clamp radius must be positive, got {}",
                        self.descent_delta
                    )));
                }
            }
        }
        Ok(())
    }
}

// ── Latent field ────────────────────────────────────────────────────────────

/// The dynamics evaluated in latent coordinates.
#[derive(Clone, Debug)]
pub enum LatentField {
    Elcd(ElcdModel),
    Ncds(NcdsModel),
    Sdd(SddModel),
    Descent(DescentField),
}

// ── Composed model ──────────────────────────────────────────────────────────

#[derive(Clone, Debug)]
pub struct ComposedModel {
    config: ModelConfig,
    diffeo: Option<DiffeoStack>,
    latent: LatentField,
    /// Data-space equilibrium; frozen unless explicitly made trainable.
    equilibrium: Parameter,
}

impl ComposedModel {
    pub fn new(config: ModelConfig, rng: &mut ChaCha8Rng) -> Result<ComposedModel> {
        config.validate()?;
        let dim = config.dim;
        let (diffeo, latent) = match config.kind {
            ModelKind::Elcd => (
                Some(DiffeoStack::new(config.flow.clone(), "flow", rng)),
                LatentField::Elcd(ElcdModel::new(config.elcd.clone(), "elcd", rng)),
            ),
            ModelKind::Ncds => (
                Some(DiffeoStack::new(config.flow.clone(), "flow", rng)),
                LatentField::Ncds(NcdsModel::new(config.ncds.clone(), "ncds", rng)),
            ),
            ModelKind::Sdd => (
                None,
                LatentField::Sdd(SddModel::new(config.sdd.clone(), "sdd", rng)),
            ),
            ModelKind::Eflow => (
                Some(DiffeoStack::new(config.flow.clone(), "flow", rng)),
                LatentField::Descent(DescentField {
                    delta: config.descent_delta,
                }),
            ),
        };
        Ok(ComposedModel {
            diffeo,
            latent,
            equilibrium: Parameter::frozen("x_star".to_string(), Tensor::zeros(&[dim])),
            config,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn kind(&self) -> ModelKind {
        self.config.kind
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn equilibrium(&self) -> &[f64] {
        self.equilibrium.value().data()
    }

    pub fn set_equilibrium(&mut self, x_star: &[f64]) {
        assert_eq!(x_star.len(), self.config.dim, "equilibrium dimension");
        self.equilibrium.set_value(Tensor::vector(x_star));
    }

    /// Let the optimizer move the data-space equilibrium (off by default).
    pub fn set_equilibrium_trainable(&mut self, trainable: bool) {
        self.equilibrium.set_trainable(trainable);
    }

    pub fn latent(&self) -> &LatentField {
        &self.latent
    }

    pub fn latent_mut(&mut self) -> &mut LatentField {
        &mut self.latent
    }

    pub fn diffeo(&self) -> Option<&DiffeoStack> {
        self.diffeo.as_ref()
    }

    pub fn diffeo_mut(&mut self) -> Option<&mut DiffeoStack> {
        self.diffeo.as_mut()
    }

    /// Freeze (or release) every diffeomorphism parameter; a frozen fresh
    /// stack pins the feature map to the identity.
    pub fn set_diffeo_trainable(&mut self, trainable: bool) {
        if let Some(d) = self.diffeo.as_mut() {
            d.visit_params_mut(&mut |p| p.set_trainable(trainable));
        }
    }

    /// Initialize the anchored latent field from an observed pair: the
    /// anchor is the (unpadded) image of the state, its velocity the
    /// (unpadded) pushforward `Dφ(x₀)·ẋ₀`. No-op for other latent kinds.
    pub fn init_anchor_from(&mut self, x0: &[f64], v0: &[f64]) {
        let (z0, w0) = match &self.diffeo {
            Some(d) => (d.forward_f64(x0), d.jacobian_f64(x0).matvec_value(v0)),
            None => (x0.to_vec(), v0.to_vec()),
        };
        if let LatentField::Ncds(n) = &mut self.latent {
            let m = n.dim();
            n.set_anchor(&unpad(&z0, m), &unpad(&w0, m));
        }
    }

    /// The latent-space equilibrium `z* = φ(x*)` at current parameters.
    pub fn latent_equilibrium_f64(&self) -> Vec<f64> {
        let x_star = self.equilibrium.value().data();
        match &self.diffeo {
            Some(d) => d.forward_f64(x_star),
            None => x_star.to_vec(),
        }
    }

    /// `z* = φ(x*)` as a tape expression. Gradients flow through `φ` into
    /// the flow parameters (and into `x*` itself only if made trainable).
    pub fn latent_equilibrium_tape(&self, tape: &Tape) -> Var {
        let x_star = tape.param(&self.equilibrium);
        match &self.diffeo {
            Some(d) => d.forward(tape, x_star),
            None => x_star,
        }
    }

    /// Evaluate the latent dynamics at `z` with equilibrium `z_star`
    /// (NCDS evaluates on its own `m` leading coordinates and pads back).
    pub fn latent_field_f64(&self, z: &[f64], z_star: &[f64]) -> Vec<f64> {
        match &self.latent {
            LatentField::Elcd(m) => m.field_f64(z, z_star),
            LatentField::Ncds(m) => {
                let v = m.field_f64(&unpad(z, m.dim()));
                let mut out = vec![0.0; z.len()];
                out[..v.len()].copy_from_slice(&v);
                out
            }
            LatentField::Sdd(m) => m.field_f64(z, z_star),
            LatentField::Descent(f) => f.field_f64(z, z_star),
        }
    }

    /// Tape twin of [`ComposedModel::latent_field_f64`].
    pub fn latent_field_tape(&self, tape: &Tape, z: Var, z_star: Var) -> Var {
        match &self.latent {
            LatentField::Elcd(m) => m.vector_field(tape, z, z_star),
            LatentField::Ncds(m) => {
                let d = tape.shape(z)[0];
                let v = m.field_tape(tape, unpad_tape(tape, z, m.dim()));
                pad_tape(tape, v, d)
            }
            LatentField::Sdd(m) => m.field_tape(tape, z, z_star),
            LatentField::Descent(f) => f.field_tape(tape, z, z_star),
        }
    }

    /// Predicted data-space velocity, reusing a precomputed `z*` (one per
    /// batch is enough — it only changes with parameters).
    pub fn predict_velocity_with_equilibrium_tape(
        &self,
        tape: &Tape,
        x: Var,
        z_star: Var,
    ) -> Result<Var> {
        match &self.diffeo {
            Some(d) => {
                let z = d.forward(tape, x);
                let v = self.latent_field_tape(tape, z, z_star);
                d.pullback_velocity(tape, x, v)
            }
            None => Ok(self.latent_field_tape(tape, x, z_star)),
        }
    }

    /// Predicted data-space velocity `Dφ(x)⁻¹ f(φ(x))` as a tape expression.
    pub fn predict_velocity_tape(&self, tape: &Tape, x: Var) -> Result<Var> {
        let z_star = self.latent_equilibrium_tape(tape);
        self.predict_velocity_with_equilibrium_tape(tape, x, z_star)
    }

    /// Value-level twin of [`ComposedModel::predict_velocity_tape`].
    pub fn predict_velocity_f64(&self, x: &[f64]) -> Result<Vec<f64>> {
        let z_star = self.latent_equilibrium_f64();
        match &self.diffeo {
            Some(d) => {
                let z = d.forward_f64(x);
                let v = self.latent_field_f64(&z, &z_star);
                d.pullback_velocity_f64(x, &v)
            }
            None => Ok(self.latent_field_f64(x, &z_star)),
        }
    }

    /// Exact Jacobian of the composed data-space field at `x`, one reverse
    /// pass per output coordinate.
    pub fn jacobian_f64(&self, x: &[f64]) -> Result<Tensor> {
        let tape = Tape::new();
        let xv = tape.constant(Tensor::vector(x));
        let f = self.predict_velocity_tape(&tape, xv)?;
        let j = tape.jacobian(xv, f);
        Ok(tape.value(j))
    }

    /// Field evaluation for integrators: writes the predicted velocity, or
    /// NaN on a non-finite state or an (unreachable by construction)
    /// singular pullback, so the integrator reports divergence instead of
    /// panicking. Non-finite inputs are refused up front because the
    /// evaluation graph asserts finiteness of every intermediate.
    pub fn field_for_integration(&self, x: &[f64], out: &mut [f64]) {
        if x.iter().any(|v| !v.is_finite()) || self.equilibrium().iter().any(|v| !v.is_finite()) {
            out.fill(f64::NAN);
            return;
        }
        match self.predict_velocity_f64(x) {
            Ok(v) => out.copy_from_slice(&v),
            Err(_) => out.fill(f64::NAN),
        }
    }
}

impl HasParams for ComposedModel {
    fn visit_params(&self, f: &mut dyn FnMut(&Parameter)) {
        if let Some(d) = &self.diffeo {
            d.visit_params(f);
        }
        match &self.latent {
            LatentField::Elcd(m) => m.visit_params(f),
            LatentField::Ncds(m) => m.visit_params(f),
            LatentField::Sdd(m) => m.visit_params(f),
            LatentField::Descent(_) => {}
        }
        f(&self.equilibrium);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        if let Some(d) = &mut self.diffeo {
            d.visit_params_mut(f);
        }
        match &mut self.latent {
            LatentField::Elcd(m) => m.visit_params_mut(f),
            LatentField::Ncds(m) => m.visit_params_mut(f),
            LatentField::Sdd(m) => m.visit_params_mut(f),
            LatentField::Descent(_) => {}
        }
        f(&mut self.equilibrium);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::elcd::randomize_params;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    /// Force a matrix network to the constant `target` by setting its final
    /// bias (the zeroed final weight ignores the hidden activations).
    fn pin_matrix_net(model: &mut ElcdModel, which: &str, target: &Tensor) {
        let suffix = format!(".{which}.layer2.b");
        let mut hit = false;
        model.visit_params_mut(&mut |p| {
            if p.name().ends_with(&suffix) {
                p.set_value(Tensor::new(vec![target.len()], target.data().to_vec()));
                hit = true;
            }
        });
        assert!(hit, "no parameter ending in {suffix}");
    }

    #[test]
    fn kind_strings_roundtrip() {
        for kind in ModelKind::ALL {
            assert_eq!(kind.as_str().parse::<ModelKind>().unwrap(), kind);
        }
        assert!("mystery".parse::<ModelKind>().is_err());
        let json = serde_json::to_string(&ModelKind::Eflow).unwrap();
        assert_eq!(json, "\"eflow\"");
    }

    #[test]
    fn config_roundtrips_through_json() {
        for kind in ModelKind::ALL {
            let cfg = ModelConfig::new(kind, 4);
            assert!(cfg.validate().is_ok(), "{kind}");
            let json = serde_json::to_string(&cfg).unwrap();
            let back: ModelConfig = serde_json::from_str(&json).unwrap();
            assert_eq!(back, cfg);
        }
        let mut bad = ModelConfig::new(ModelKind::Elcd, 4);
        bad.elcd.dim = 3;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn conjugating_a_linear_field_through_a_linear_map_is_exact() {
        // Data dynamics ẋ = Ax with A = [[-1, 4], [0, -1]] — stable but not
        // contracting in the Euclidean metric. Under z = Px, P = diag(1, 4),
        // the latent matrix PAP⁻¹ = [[-1, 1], [0, -1]] *is* contracting, and
        // the extended linearization can represent it exactly:
        //   sym  = [[-1, .5], [.5, -1]] = -(PₛᵀPₛ) - αI with Pₛ = √(−sym−αI),
        //   skew = [[0, .5], [-.5, 0]]  = P_a − P_aᵀ with P_a = [[0,.5],[0,0]].
        let alpha = 0.05;
        let mut cfg = ModelConfig::new(ModelKind::Elcd, 2);
        cfg.flow.couplings = 0; // single invertible-linear layer
        cfg.elcd.alpha = alpha;
        let mut model = ComposedModel::new(cfg, &mut rng(1)).unwrap();

        // φ = diag(1, 4): identity L, diagonal U via log-diagonal.
        let zero2 = Tensor::zeros(&[2, 2]);
        model.diffeo_mut().unwrap().affine_layers_mut()[0].set_factors(
            &zero2,
            &zero2,
            &[0.0, 4.0_f64.ln()],
            &[0.0, 0.0],
        );

        // √M for 2×2 SPD M: (M + √det·I) / √(tr + 2√det).
        let m: [[f64; 2]; 2] = [[0.95, -0.5], [-0.5, 0.95]];
        let sqrt_det = (m[0][0] * m[1][1] - m[0][1] * m[1][0]).sqrt();
        let s = (m[0][0] + m[1][1] + 2.0 * sqrt_det).sqrt();
        let p_s = Tensor::matrix(
            2,
            2,
            vec![
                (m[0][0] + sqrt_det) / s,
                m[0][1] / s,
                m[1][0] / s,
                (m[1][1] + sqrt_det) / s,
            ],
        );
        let p_a = Tensor::matrix(2, 2, vec![0.0, 0.5, 0.0, 0.0]);
        match model.latent_mut() {
            LatentField::Elcd(e) => {
                pin_matrix_net(e, "p_s", &p_s);
                pin_matrix_net(e, "p_a", &p_a);
                let a = e.a_matrix_f64(&[0.3, 0.7], &[0.0, 0.0]);
                for (got, want) in a.data().iter().zip([-1.0, 1.0, 0.0, -1.0]) {
                    assert!((got - want).abs() <= 1e-14, "latent matrix {got} vs {want}");
                }
            }
            _ => unreachable!(),
        }

        let a = [[-1.0, 4.0], [0.0, -1.0]];
        let mut r = rng(2);
        for _ in 0..100 {
            let x: Vec<f64> = (0..2).map(|_| r.gen_range(-3.0..3.0)).collect();
            let got = model.predict_velocity_f64(&x).unwrap();
            for i in 0..2 {
                let want = a[i][0] * x[0] + a[i][1] * x[1];
                assert!((got[i] - want).abs() <= 1e-12, "{got:?} vs A·{x:?}");
            }
        }
    }

    #[test]
    fn identity_flow_reduces_to_the_bare_latent_field() {
        let mut model = ComposedModel::new(ModelConfig::new(ModelKind::Elcd, 2), &mut rng(3)).unwrap();
        model.set_equilibrium(&[0.4, -0.6]);
        let mut r = rng(4);
        if let LatentField::Elcd(e) = model.latent_mut() {
            randomize_params(e, 0.3, &mut r);
        }
        let x_star = [0.4, -0.6];
        if let LatentField::Elcd(e) = model.latent() {
            for _ in 0..50 {
                let x: Vec<f64> = (0..2).map(|_| r.gen_range(-2.0..2.0)).collect();
                let composed = model.predict_velocity_f64(&x).unwrap();
                let bare = e.field_f64(&x, &x_star);
                for i in 0..2 {
                    assert!(
                        (composed[i] - bare[i]).abs() <= 1e-12 * (1.0 + bare[i].abs()),
                        "{composed:?} vs {bare:?}"
                    );
                }
            }
        }
    }

    #[test]
    fn composed_field_vanishes_exactly_at_the_equilibrium() {
        // The anchored-Jacobian baseline is excluded: its equilibrium is
        // implicit (wherever the line integral balances the anchor velocity)
        // rather than pinned to x*.
        for kind in [ModelKind::Elcd, ModelKind::Sdd, ModelKind::Eflow] {
            let mut model = ComposedModel::new(ModelConfig::new(kind, 3), &mut rng(5)).unwrap();
            let mut r = rng(6);
            randomize_params(&mut model, 0.2, &mut r);
            let x_star = [0.8, -1.1, 0.3];
            model.set_equilibrium(&x_star);
            let v = model.predict_velocity_f64(&x_star).unwrap();
            assert_eq!(v, vec![0.0; 3], "{kind}: {v:?}");
            let tape = Tape::new();
            let xv = tape.constant(Tensor::vector(&x_star));
            let out = model.predict_velocity_tape(&tape, xv).unwrap();
            assert_eq!(tape.value(out).data(), &[0.0; 3], "{kind} (tape)");
        }
    }

    #[test]
    fn padded_latent_keeps_extra_components_zero_under_identity_flow() {
        let mut cfg = ModelConfig::new(ModelKind::Ncds, 4);
        cfg.flow.couplings = 0; // identity affine layer, frozen below
        let mut model = ComposedModel::new(cfg, &mut rng(7)).unwrap();
        model.set_diffeo_trainable(false);
        model.init_anchor_from(&[1.0, 2.0, 3.0, 4.0], &[0.1, -0.2, 0.3, -0.4]);
        if let LatentField::Ncds(n) = model.latent() {
            assert_eq!(n.anchor_point(), &[1.0, 2.0]);
            assert_eq!(n.anchor_velocity(), &[0.1, -0.2]);
        }
        let v = model.predict_velocity_f64(&[0.5, -0.5, 2.0, 1.0]).unwrap();
        assert_eq!(v.len(), 4);
        assert!(v[0] != 0.0 && v[1] != 0.0, "{v:?}");
        // With φ = identity the pullback preserves the zero padding.
        assert_eq!(&v[2..], &[0.0, 0.0], "{v:?}");
    }

    #[test]
    fn tape_and_value_predictions_agree_for_every_kind() {
        for (seed, kind) in ModelKind::ALL.into_iter().enumerate() {
            let mut model =
                ComposedModel::new(ModelConfig::new(kind, 2), &mut rng(8 + seed as u64)).unwrap();
            let mut r = rng(20 + seed as u64);
            randomize_params(&mut model, 0.2, &mut r);
            model.set_equilibrium(&[0.25, -0.75]);
            if kind == ModelKind::Ncds {
                model.init_anchor_from(&[1.0, 0.5], &[-0.3, 0.2]);
            }
            for _ in 0..20 {
                let x: Vec<f64> = (0..2).map(|_| r.gen_range(-2.0..2.0)).collect();
                let plain = model.predict_velocity_f64(&x).unwrap();
                let tape = Tape::new();
                let xv = tape.constant(Tensor::vector(&x));
                let traced = tape.value(model.predict_velocity_tape(&tape, xv).unwrap());
                for i in 0..2 {
                    assert!(
                        (plain[i] - traced.data()[i]).abs() <= 1e-12 * (1.0 + plain[i].abs()),
                        "{kind} at {x:?}: {plain:?} vs {:?}",
                        traced.data()
                    );
                }
            }
        }
    }

    #[test]
    fn gradients_flow_through_the_latent_equilibrium() {
        // Perturbing a flow parameter moves z* = φ(x*) and hence the
        // prediction; the tape must account for that path. Check the full
        // loss gradient of one flow parameter against finite differences.
        let mut model = ComposedModel::new(ModelConfig::new(ModelKind::Elcd, 2), &mut rng(31)).unwrap();
        let mut r = rng(32);
        randomize_params(&mut model, 0.2, &mut r);
        model.set_equilibrium(&[0.5, -0.5]);
        let x = [1.2, 0.3];
        let target = [0.4, -0.1];
        let eval_loss = |m: &ComposedModel| -> f64 {
            let tape = Tape::new();
            let xv = tape.constant(Tensor::vector(&x));
            let pred = m.predict_velocity_tape(&tape, xv).unwrap();
            let diff = tape.sub(pred, tape.constant(Tensor::vector(&target)));
            tape.value(tape.sum(tape.square(diff))).value()
        };
        let tape = Tape::new();
        let xv = tape.constant(Tensor::vector(&x));
        let pred = model.predict_velocity_tape(&tape, xv).unwrap();
        let diff = tape.sub(pred, tape.constant(Tensor::vector(&target)));
        let grads = tape.backward(tape.sum(tape.square(diff))).unwrap();

        let pname = "flow.affine0.upper";
        let pidx = 1usize;
        let h = 1e-6;
        let mut up = model.clone();
        let mut dn = model.clone();
        let bump = |m: &mut ComposedModel, delta: f64| {
            m.visit_params_mut(&mut |p| {
                if p.name() == pname {
                    p.value_mut().data_mut()[pidx] += delta;
                }
            });
        };
        bump(&mut up, h);
        bump(&mut dn, -h);
        let fd = (eval_loss(&up) - eval_loss(&dn)) / (2.0 * h);
        let analytic = grads.param(pname).expect("flow gradient").data()[pidx];
        assert!(
            (fd - analytic).abs() <= 1e-5 * (1.0 + fd.abs()),
            "fd {fd} vs grad {analytic}"
        );
        assert!(analytic != 0.0, "equilibrium path contributed nothing");
    }
}
