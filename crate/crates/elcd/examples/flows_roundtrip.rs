//! Tour of the invertible coordinate changes: exact identity at
//! initialization, numerically exact inversion, analytic Jacobians that
//! match finite differences, and log-determinants that track volume change.
//!
//! The stack alternates invertible-linear layers with rational-quadratic
//! spline coupling blocks; both invert in closed form, so the inverse costs
//! the same as the forward pass and roundtrip error sits near machine
//! epsilon — no fixed-point iteration anywhere.
//!
//! Run with: `cargo run --example flows_roundtrip`

use elcd::elcd::randomize_params;
use elcd::flows::{DiffeoStack, FlowConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);

    for dim in [2usize, 4, 8] {
        let cfg = FlowConfig::with_dim(dim);
        let mut flow = DiffeoStack::new(cfg, "flow", &mut rng);

        // ── fresh stacks are exactly the identity map ───────────────────────
        let probe: Vec<f64> = (0..dim).map(|i| 0.3 * i as f64 - 0.7).collect();
        assert_eq!(flow.forward_f64(&probe), probe, "init must be exact identity");

        // ── after perturbing every parameter, inversion stays exact ────────
        // (0.2 is the magnitude training actually produces; far hotter
        // parameters saturate the spline squash and trade precision for
        // boundedness — see the crate tests for that regime.)
        randomize_params(&mut flow, 0.2, &mut rng);
        let mut worst_roundtrip = 0.0f64;
        let mut worst_jac = 0.0f64;
        for _ in 0..200 {
            let x: Vec<f64> = (0..dim).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let z = flow.forward_f64(&x);
            let back = flow.inverse_f64(&z);
            let rt = x
                .iter()
                .zip(&back)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            worst_roundtrip = worst_roundtrip.max(rt);

            // central finite differences vs the reverse-mode Jacobian
            let j = flow.jacobian_f64(&x);
            let h = 1e-6;
            for col in 0..dim {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[col] += h;
                xm[col] -= h;
                let fp = flow.forward_f64(&xp);
                let fm = flow.forward_f64(&xm);
                for row in 0..dim {
                    let fd = (fp[row] - fm[row]) / (2.0 * h);
                    worst_jac = worst_jac.max((j.get(row, col) - fd).abs());
                }
            }
        }

        // ── volume change: per-layer closed form vs LU of the dense Jacobian
        let x: Vec<f64> = (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let analytic = flow.jacobian_determinant_analytic(&x);
        let dense = elcd::linalg::determinant(&flow.jacobian_f64(&x));
        println!(
            "dim {dim}: roundtrip {worst_roundtrip:.2e}, jacobian-vs-FD {worst_jac:.2e}, \
             det Dφ closed-form {analytic:.6} vs dense LU {dense:.6}"
        );
        assert!(worst_roundtrip < 1e-8);
        assert!(worst_jac < 1e-5);
        assert!((analytic - dense).abs() <= 1e-9 * analytic.abs().max(1.0));
    }
    println!();
    println!("closed-form inverses: no iteration, machine-precision roundtrips.");
}
