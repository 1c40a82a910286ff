//! Trajectory-similarity scoring for learned vector fields.
//!
//! The score is a normalized bidirectional nearest-neighbor distance
//! (Chamfer-style, conventionally reported as "DTWD" on these benchmarks):
//!
//! ```text
//! DTWD(x, x̄) = 1/t₁ Σᵢ min_j ‖xᵢ - x̄ⱼ‖ + 1/t₂ Σⱼ min_i ‖x̄ⱼ - xᵢ‖
//! ```
//!
//! Note this is the printed double-sum, not dynamic-time-warping DP: it uses
//! unordered minima, so it is symmetric and invariant to reordering the
//! points within each trajectory. [`eval_model`] rolls a field out from each
//! demonstration's initial state over that demonstration's own time span
//! (step = its median sampling interval) and scores against it.

use std::fmt;

use crate::data::{Dataset, Trajectory};
use crate::error::{Error, Result};
use crate::rollout::{integrate, IntegratorConfig};

// ── DTWD ────────────────────────────────────────────────────────────────────

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn directed_mean_nn(from: &Trajectory, to: &Trajectory) -> f64 {
    let mut total = 0.0;
    for i in 0..from.len() {
        let mut best = f64::INFINITY;
        for j in 0..to.len() {
            let d = euclidean(from.state(i), to.state(j));
            if d < best {
                best = d;
            }
        }
        total += best;
    }
    total / from.len() as f64
}

/// Bidirectional mean nearest-neighbor distance between two trajectories.
pub fn dtwd(a: &Trajectory, b: &Trajectory) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Config("dtwd: empty trajectory".into()));
    }
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            context: "dtwd trajectory dimensions",
            expected: a.dim(),
            got: b.dim(),
        });
    }
    Ok(directed_mean_nn(a, b) + directed_mean_nn(b, a))
}

// ── Evaluation over a dataset ───────────────────────────────────────────────

/// Per-demonstration scores with their mean and population standard
/// deviation.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalSummary {
    pub values: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl EvalSummary {
    pub fn from_values(values: Vec<f64>) -> EvalSummary {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        EvalSummary {
            values,
            mean,
            std: var.sqrt(),
        }
    }

    pub fn n(&self) -> usize {
        self.values.len()
    }

    /// One `model,dataset,mean,std,n` CSV row (no header).
    pub fn csv_row(&self, model: &str, dataset: &str) -> String {
        format!("{model},{dataset},{},{},{}", self.mean, self.std, self.n())
    }
}

impl fmt::Display for EvalSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "DTWD mean {:.6} ± {:.6} over {} trajectories", self.mean, self.std, self.n())?;
        for (i, v) in self.values.iter().enumerate() {
            writeln!(f, "  traj {i:>3}  {v:.6}")?;
        }
        Ok(())
    }
}

/// Roll `field` out from every demonstration's first state across that
/// demonstration's own duration (dt = the demonstration's median sampling
/// interval; `cfg` contributes the integration scheme and serves as a
/// fallback when a demonstration is too short to define a step) and score
/// each rollout against its demonstration.
pub fn eval_model<F>(mut field: F, dataset: &Dataset, cfg: &IntegratorConfig) -> Result<EvalSummary>
where
    F: FnMut(&[f64], &mut [f64]),
{
    if dataset.trajectories.is_empty() {
        return Err(Error::Config("eval_model: empty dataset".into()));
    }
    let mut values = Vec::with_capacity(dataset.trajectories.len());
    for demo in &dataset.trajectories {
        let mut per_demo = cfg.clone();
        if demo.len() >= 2 {
            per_demo.dt = demo.median_dt();
            per_demo.horizon = demo.duration();
        }
        per_demo.record_stride = 1;
        per_demo.validate()?;
        let rollout = integrate(&mut field, demo.first_state(), &per_demo)?;
        values.push(dtwd(&rollout, demo)?);
    }
    Ok(EvalSummary::from_values(values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::toy::{gen_toy_linear, toy_field, toy_state};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn traj_from(points: &[&[f64]]) -> Trajectory {
        let d = points[0].len();
        let mut t = Trajectory::new(d);
        let zeros = vec![0.0; d];
        for (k, p) in points.iter().enumerate() {
            t.push(k as f64, p, &zeros);
        }
        t
    }

    fn random_traj(rng: &mut ChaCha8Rng, dim: usize, len: usize) -> Trajectory {
        let mut t = Trajectory::new(dim);
        let zeros = vec![0.0; dim];
        for k in 0..len {
            let x: Vec<f64> = (0..dim).map(|_| rng.gen_range(-5.0..5.0)).collect();
            t.push(k as f64, &x, &zeros);
        }
        t
    }

    #[test]
    fn identical_trajectories_score_zero() {
        let a = traj_from(&[&[0.0, 0.0], &[1.0, 2.0], &[3.0, -1.0]]);
        assert_eq!(dtwd(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn hand_computed_two_point_case() {
        let a = traj_from(&[&[0.0, 0.0], &[1.0, 0.0]]);
        let b = traj_from(&[&[0.0, 1.0]]);
        let expected = (1.0 + 2.0f64.sqrt()) / 2.0 + 1.0;
        assert!((dtwd(&a, &b).unwrap() - expected).abs() <= 1e-12);
        assert!((expected - 2.2071067811865475).abs() <= 1e-15);
    }

    #[test]
    fn symmetric_and_nonnegative_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for _ in 0..100 {
            let la = rng.gen_range(1..12);
            let lb = rng.gen_range(1..12);
            let a = random_traj(&mut rng, 3, la);
            let b = random_traj(&mut rng, 3, lb);
            let ab = dtwd(&a, &b).unwrap();
            let ba = dtwd(&b, &a).unwrap();
            assert_eq!(ab.to_bits(), ba.to_bits(), "symmetry must be exact");
            assert!(ab >= 0.0);
        }
    }

    #[test]
    fn invariant_to_point_reordering() {
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let a = random_traj(&mut rng, 2, 9);
        let b = random_traj(&mut rng, 2, 7);
        // Reverse the points of b (times are just re-indexed).
        let mut b_rev = Trajectory::new(2);
        for k in (0..b.len()).rev() {
            b_rev.push((b.len() - 1 - k) as f64, b.state(k), b.velocity(k));
        }
        let orig = dtwd(&a, &b).unwrap();
        let perm = dtwd(&a, &b_rev).unwrap();
        assert_eq!(orig.to_bits(), perm.to_bits());
    }

    #[test]
    fn rejects_empty_and_mismatched() {
        let a = traj_from(&[&[0.0, 0.0]]);
        let empty = Trajectory::new(2);
        assert!(dtwd(&a, &empty).is_err());
        let b3 = traj_from(&[&[0.0, 0.0, 0.0]]);
        let err = dtwd(&a, &b3).unwrap_err().to_string();
        assert!(err.contains("expected 2"), "{err}");
    }

    #[test]
    fn exact_field_scores_near_zero() {
        let ds = gen_toy_linear();
        let cfg = IntegratorConfig::default();
        let summary = eval_model(|x, out| out.copy_from_slice(&toy_field(x)), &ds, &cfg).unwrap();
        assert_eq!(summary.n(), 2);
        for v in &summary.values {
            assert!(*v <= 1e-5, "DTWD {v} for an exact field");
        }
        assert!(summary.mean <= 1e-5);
    }

    #[test]
    fn zero_field_matches_hand_computed_stationary_score() {
        let ds = gen_toy_linear();
        let cfg = IntegratorConfig::default();
        let summary = eval_model(|_, out| out.fill(0.0), &ds, &cfg).unwrap();
        // A zero field parks the rollout at the demonstration's first state,
        // so the score is min-distance(x0 -> demo) (zero: x0 is a demo
        // point) plus the demo's mean distance to x0.
        for (v, demo) in summary.values.iter().zip(&ds.trajectories) {
            let x0 = demo.first_state();
            let mean_dist = (0..demo.len())
                .map(|j| euclidean(demo.state(j), x0))
                .sum::<f64>()
                / demo.len() as f64;
            assert!((v - mean_dist).abs() <= 1e-12, "{v} vs {mean_dist}");
        }
    }

    #[test]
    fn rollout_tracks_matrix_exponential_on_linear_field() {
        // RK4 at dt = 0.01 against the closed form over t ∈ [0, 5].
        let cfg = IntegratorConfig::rk4(0.01, 5.0);
        let traj = integrate(|x, out| out.copy_from_slice(&toy_field(x)), &[0.0, 2.0], &cfg).unwrap();
        for k in 0..traj.len() {
            let exact = toy_state([0.0, 2.0], traj.time(k));
            let scale = (exact[0] * exact[0] + exact[1] * exact[1]).sqrt().max(1.0);
            let err = euclidean(traj.state(k), &exact);
            assert!(err / scale <= 1e-6, "sample {k}: rel err {}", err / scale);
        }
    }

    #[test]
    fn summary_statistics_are_consistent() {
        let s = EvalSummary::from_values(vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.mean, 2.5);
        assert!((s.std - (1.25f64).sqrt()).abs() <= 1e-15);
        let row = s.csv_row("elcd", "toy");
        assert!(row.starts_with("elcd,toy,2.5,"));
        assert!(row.ends_with(",4"));
        let text = s.to_string();
        assert!(text.contains("± ") && text.contains("traj   0"));
    }
}
