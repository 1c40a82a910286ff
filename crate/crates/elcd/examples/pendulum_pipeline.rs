//! End-to-end pipeline on simulated robot data: generate damped 2-link
//! pendulum swing-downs, standardize, train a contracting model, score it
//! with dynamic-time-warping distance, and roll it out from a held-out
//! start.
//!
//! Everything here mirrors what the `elcd` binary does with
//! `gen-data pendulum`, `train`, `eval`, and `rollout` — this example uses
//! the library API directly so the steps are visible.
//!
//! Run with: `cargo run --release --example pendulum_pipeline`
//! (about a minute unoptimized; seconds with --release)

use elcd::data::pendulum::{gen_pendulum, PendulumConfig};
use elcd::eval::eval_model;
use elcd::model::{ComposedModel, ModelConfig, ModelKind};
use elcd::rollout::{integrate, IntegratorConfig};
use elcd::train::{prepare_model_for, train, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> elcd::Result<()> {
    // ── data: 6 swing-downs of a damped 2-link arm (4D state) ──────────────
    let mut pcfg = PendulumConfig::with_links(2);
    pcfg.horizon = 8.0; // shorter than the default so the example stays quick
    let raw = gen_pendulum(&pcfg, 42)?;
    println!(
        "generated {} trajectories in {}D ({} samples)",
        raw.trajectories.len(),
        raw.dim(),
        raw.n_samples()
    );

    // ── standardize and fit ─────────────────────────────────────────────────
    let (data, stats) = raw.standardize()?;
    let cfg = ModelConfig::new(ModelKind::Elcd, data.dim());
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut model = ComposedModel::new(cfg, &mut rng)?;
    prepare_model_for(&mut model, &data);

    let train_cfg = TrainConfig {
        epochs: 60,
        learning_rate: 2e-3,
        seed: 1,
        ..Default::default()
    };
    let history = train(&mut model, &data, &train_cfg)?;
    println!(
        "trained {} epochs: loss {:.4e} → {:.4e}",
        history.len(),
        history.first().unwrap(),
        history.last().unwrap()
    );

    // ── score: mean DTWD between demonstrations and model rollouts ─────────
    let eval_cfg = IntegratorConfig::rk4(0.01, pcfg.horizon);
    let mut field = |x: &[f64], out: &mut [f64]| model.field_for_integration(x, out);
    let summary = eval_model(&mut field, &data, &eval_cfg)?;
    println!(
        "standardized DTWD: mean {:.4}, std {:.4} over {} demonstrations",
        summary.mean,
        summary.std,
        summary.n()
    );

    // ── rollout from a perturbed start, reported in raw units ──────────────
    let mut start = data.trajectories[0].first_state().to_vec();
    start[0] += 0.3; // nudge the first joint angle off the demonstration
    let mut field = |x: &[f64], out: &mut [f64]| model.field_for_integration(x, out);
    let traj = integrate(&mut field, &start, &eval_cfg)?;
    let last = traj.last_state();
    let x_star = model.equilibrium();
    let end_err: f64 = last
        .iter()
        .zip(x_star)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let raw_end: Vec<f64> = last
        .iter()
        .zip(&stats.mean)
        .zip(&stats.std)
        .map(|((z, m), s)| z * s + m)
        .collect();
    println!(
        "perturbed rollout ends {:.3e} from the learned equilibrium",
        end_err
    );
    println!(
        "final state in raw units: [{}]",
        raw_end
            .iter()
            .map(|v| format!("{v:.4}"))
            .collect::<Vec<_>>()
            .join(", ")
    );
    println!("(the hanging rest configuration, reached without ever being demonstrated)");
    Ok(())
}
