//! Certify — numerically, after training — that a learned model really is
//! globally contracting, rather than trusting the construction.
//!
//! Three independent certificates are checked on a freshly trained model:
//!
//! 1. **Algebraic**: the latent matrix field A(z) must satisfy
//!    λmax(½(A + Aᵀ)) ≤ −α at every sampled point. This holds by
//!    construction (−PᵀP plus a skew part minus αI), so the margin should
//!    sit at rounding error.
//! 2. **Trajectory**: every latent rollout must obey the exponential bound
//!    ‖z(t) − z*‖ ≤ e^{−αt}‖z(0) − z*‖ (the defining property of
//!    contraction toward an equilibrium, with no transient excursion).
//! 3. **Metric**: in *data* space the certificate metric is the pullback
//!    M(x) = Dφ(x)ᵀDφ(x); the generalized Jacobian
//!    JᵀM + MJ + Ṁ + 2cM must be negative semidefinite for rate c.
//!
//! Run with: `cargo run --example verify_contraction`

use elcd::data::toy::gen_toy_linear;
use elcd::linalg::symmetric_eigenvalue_max;
use elcd::model::{ComposedModel, LatentField, ModelConfig, ModelKind};
use elcd::rollout::IntegratorConfig;
use elcd::train::{prepare_model_for, train, TrainConfig};
use elcd::verify::{contraction_check, equilibrium_bound_check};
use elcd::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> elcd::Result<()> {
    // Train briefly: the certificates must hold at *any* parameter values,
    // trained or not, so a short run is enough to leave the initialization.
    let (data, _) = gen_toy_linear().standardize()?;
    let cfg = ModelConfig::new(ModelKind::Elcd, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut model = ComposedModel::new(cfg, &mut rng)?;
    prepare_model_for(&mut model, &data);
    train(
        &mut model,
        &data,
        &TrainConfig {
            epochs: 15,
            seed: 11,
            ..Default::default()
        },
    )?;

    let z_star = model.latent_equilibrium_f64();
    let LatentField::Elcd(latent) = model.latent() else {
        unreachable!("the model was built as the contracting-matrix kind");
    };
    let alpha = latent.alpha();

    // ── 1. algebraic margin at 2000 random latent points ────────────────────
    let mut sample_rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..2000 {
        let z: Vec<f64> = z_star
            .iter()
            .map(|c| c + sample_rng.gen_range(-3.0..3.0))
            .collect();
        let a = latent.a_matrix_f64(&z, &z_star);
        let mut sym = a.clone();
        sym.add_assign(&a.transposed());
        sym.scale_in_place(0.5);
        worst = worst.max(symmetric_eigenvalue_max(&sym) + alpha);
    }
    println!("1. algebraic:  max over 2000 points of λmax(sym A) + α = {worst:.2e}");
    assert!(worst <= 1e-10);

    // ── 2. exponential decay bound along 20 latent rollouts ────────────────
    let starts: Vec<Vec<f64>> = (0..20)
        .map(|_| {
            z_star
                .iter()
                .map(|c| c + sample_rng.gen_range(-2.0..2.0))
                .collect()
        })
        .collect();
    let mut latent_field = |z: &[f64], out: &mut [f64]| {
        out.copy_from_slice(&model.latent_field_f64(z, &z_star));
    };
    let violation = equilibrium_bound_check(
        &mut latent_field,
        &z_star,
        alpha,
        &starts,
        &IntegratorConfig::rk4(1e-3, 5.0),
    );
    println!(
        "2. trajectory: max relative overshoot of e^(-αt)‖z0 − z*‖ = {:.2e}",
        violation.max
    );
    assert!(violation.pass(1e-3));

    // ── 3. metric condition in data space with the pullback metric ─────────
    let metric = |x: &[f64]| -> elcd::Result<Tensor> {
        let j = model.diffeo().expect("flow present").jacobian_f64(x);
        Ok(j.transposed().matmul_value(&j))
    };
    let points: Vec<Vec<f64>> = (0..50)
        .map(|_| (0..2).map(|_| sample_rng.gen_range(-1.5..1.5)).collect())
        .collect();
    let mut field = |x: &[f64], out: &mut [f64]| model.field_for_integration(x, out);
    let mut jac = |x: &[f64], out: &mut [f64]| match model.jacobian_f64(x) {
        Ok(j) => out.copy_from_slice(j.data()),
        Err(_) => out.fill(f64::NAN),
    };
    let assessment =
        contraction_check(&mut field, &mut jac, metric, 0.5 * alpha, &points, 1e-4, 5e-2)?;
    println!(
        "3. metric:     λmax(JᵀM + MJ + Ṁ + 2cM) ≤ {:.2e} at 50 points (rate c = {})",
        assessment
            .samples
            .iter()
            .map(|s| s.lambda_max)
            .fold(f64::NEG_INFINITY, f64::max),
        0.5 * alpha
    );
    assert!(assessment.pass);

    println!();
    println!("all three certificates hold: the learned vector field is");
    println!("globally contracting at rate α = {alpha} in the latent space.");
    Ok(())
}
