//! Damped n-link pendulum demonstrations via the manipulator equations.
//!
//! For joint angles θ (measured from the downward vertical) the dynamics are
//! `M(θ) θ̈ + C(θ, θ̇) + G(θ) + b θ̇ = 0` with
//!
//! ```text
//! M_ij = l_i l_j cos(θ_i - θ_j) · Σ_{k ≥ max(i,j)} m_k
//! C_i  = Σ_j l_i l_j sin(θ_i - θ_j) θ̇_j² · Σ_{k ≥ max(i,j)} m_k
//! G_i  = g l_i sin(θ_i) · Σ_{k ≥ i} m_k
//! ```
//!
//! (point masses at the link ends). The state is the interleaved vector
//! `(θ_1, θ̇_1, …, θ_n, θ̇_n)`, dimension `2n`, and the damped system
//! converges to the hanging equilibrium at the origin. Total energy
//! `E = ½ θ̇ᵀ M θ̇ - g Σ_j l_j cos(θ_j) Σ_{i ≥ j} m_i` satisfies
//! `dE/dt = -b Σ θ̇²`, which the tests use as an oracle: E is conserved when
//! `b = 0` and non-increasing otherwise.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::linalg::LuFactors;
use crate::rollout::{integrate, IntegratorConfig, Scheme};
use crate::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PendulumConfig {
    /// Number of links `n`; the state dimension is `2n`.
    pub links: usize,
    /// Point mass at the end of each link (kg).
    pub masses: Vec<f64>,
    /// Length of each link (m).
    pub lengths: Vec<f64>,
    /// Viscous damping coefficient on every joint.
    pub damping: f64,
    pub gravity: f64,
    pub dt: f64,
    pub horizon: f64,
    pub trajectories: usize,
}

impl PendulumConfig {
    pub fn with_links(links: usize) -> PendulumConfig {
        PendulumConfig {
            links,
            masses: vec![1.0; links],
            lengths: vec![1.0; links],
            damping: 0.5,
            gravity: 9.81,
            dt: 0.01,
            horizon: 20.0,
            trajectories: 6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.links == 0 {
            return Err(Error::Config("pendulum needs at least one link".into()));
        }
        if self.masses.len() != self.links || self.lengths.len() != self.links {
            return Err(Error::Config(format!(
                "pendulum with {} links needs {} masses and lengths (got {} and {})",
                self.links,
                self.links,
                self.masses.len(),
                self.lengths.len()
            )));
        }
        if self.masses.iter().chain(&self.lengths).any(|&v| !(v > 0.0)) {
            return Err(Error::Config("masses and lengths must be positive".into()));
        }
        if !(self.dt > 0.0) || !(self.horizon > 0.0) || self.damping < 0.0 {
            return Err(Error::Config("dt and horizon must be positive, damping nonnegative".into()));
        }
        if self.trajectories == 0 {
            return Err(Error::Config("trajectory count must be positive".into()));
        }
        Ok(())
    }

    /// Tail mass sums `Σ_{k ≥ j} m_k`.
    fn tail_masses(&self) -> Vec<f64> {
        let mut tail = vec![0.0; self.links];
        let mut acc = 0.0;
        for j in (0..self.links).rev() {
            acc += self.masses[j];
            tail[j] = acc;
        }
        tail
    }
}

impl Default for PendulumConfig {
    fn default() -> PendulumConfig {
        PendulumConfig::with_links(2)
    }
}

/// Time derivative of the interleaved state under the manipulator equations.
pub fn pendulum_field(cfg: &PendulumConfig, state: &[f64], out: &mut [f64]) {
    let n = cfg.links;
    assert_eq!(state.len(), 2 * n);
    let tail = cfg.tail_masses();
    let theta: Vec<f64> = (0..n).map(|i| state[2 * i]).collect();
    let omega: Vec<f64> = (0..n).map(|i| state[2 * i + 1]).collect();

    let mut m = vec![0.0; n * n];
    let mut rhs = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            let coupling = tail[i.max(j)] * cfg.lengths[i] * cfg.lengths[j];
            m[i * n + j] = coupling * (theta[i] - theta[j]).cos();
            rhs[i] -= coupling * (theta[i] - theta[j]).sin() * omega[j] * omega[j];
        }
        rhs[i] -= cfg.gravity * cfg.lengths[i] * theta[i].sin() * tail[i];
        rhs[i] -= cfg.damping * omega[i];
    }
    let lu = LuFactors::factor(&Tensor::matrix(n, n, m))
        .expect("pendulum mass matrix is positive definite");
    let accel = lu.solve(&rhs);
    for i in 0..n {
        out[2 * i] = omega[i];
        out[2 * i + 1] = accel[i];
    }
}

/// Total mechanical energy `½ θ̇ᵀ M θ̇ - g Σ_j l_j cos(θ_j) Σ_{i ≥ j} m_i`.
/// The potential reference puts the minimum (hanging rest) at
/// `-g Σ_j l_j Σ_{i ≥ j} m_i`, not zero.
pub fn pendulum_energy(cfg: &PendulumConfig, state: &[f64]) -> f64 {
    let n = cfg.links;
    let tail = cfg.tail_masses();
    let theta: Vec<f64> = (0..n).map(|i| state[2 * i]).collect();
    let omega: Vec<f64> = (0..n).map(|i| state[2 * i + 1]).collect();
    let mut kinetic = 0.0;
    for i in 0..n {
        for j in 0..n {
            kinetic += 0.5
                * tail[i.max(j)]
                * cfg.lengths[i]
                * cfg.lengths[j]
                * (theta[i] - theta[j]).cos()
                * omega[i]
                * omega[j];
        }
    }
    let mut potential = 0.0;
    for j in 0..n {
        potential -= cfg.gravity * cfg.lengths[j] * theta[j].cos() * tail[j];
    }
    kinetic + potential
}

/// Simulate `cfg.trajectories` releases from rest at angles drawn uniformly
/// from `[-π/2, π/2]` per joint. Each trajectory uses an independent RNG
/// stream of the seed, so changing the trajectory count does not perturb
/// earlier trajectories.
pub fn gen_pendulum(cfg: &PendulumConfig, seed: u64) -> Result<Dataset> {
    cfg.validate()?;
    let integ = IntegratorConfig {
        scheme: Scheme::Rk4,
        dt: cfg.dt,
        horizon: cfg.horizon,
        record_stride: 1,
    };
    let mut trajectories = Vec::with_capacity(cfg.trajectories);
    for t in 0..cfg.trajectories {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(t as u64);
        let mut x0 = vec![0.0; 2 * cfg.links];
        for i in 0..cfg.links {
            x0[2 * i] = rng.gen_range(-std::f64::consts::FRAC_PI_2..std::f64::consts::FRAC_PI_2);
        }
        let traj = integrate(|x, out| pendulum_field(cfg, x, out), &x0, &integ)?;
        trajectories.push(traj);
    }
    Ok(Dataset::new(trajectories).with_meta(
        "pendulum",
        serde_json::to_value(cfg).expect("config serializes"),
        Some(seed),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hanging_equilibrium_is_stationary() {
        let cfg = PendulumConfig::default();
        let mut out = vec![1.0; 4];
        pendulum_field(&cfg, &[0.0; 4], &mut out);
        assert_eq!(out, vec![0.0; 4], "field at the origin must vanish");
    }

    #[test]
    fn single_link_matches_textbook_form() {
        // n = 1: θ̈ = -(g/l) sin θ - (b / (m l²)) θ̇.
        let mut cfg = PendulumConfig::with_links(1);
        cfg.masses = vec![2.0];
        cfg.lengths = vec![0.5];
        let state = [0.3, -0.7];
        let mut out = [0.0; 2];
        pendulum_field(&cfg, &state, &mut out);
        let expected = -(9.81 / 0.5) * 0.3f64.sin() - 0.5 * (-0.7) / (2.0 * 0.25);
        assert!((out[0] - (-0.7)).abs() <= 1e-15);
        assert!((out[1] - expected).abs() <= 1e-12, "{} vs {expected}", out[1]);
    }

    #[test]
    fn energy_never_increases_with_damping() {
        let mut cfg = PendulumConfig::default();
        cfg.horizon = 5.0;
        cfg.trajectories = 2;
        let ds = gen_pendulum(&cfg, 7).unwrap();
        for traj in &ds.trajectories {
            let mut prev = pendulum_energy(&cfg, traj.state(0));
            for k in 1..traj.len() {
                let e = pendulum_energy(&cfg, traj.state(k));
                assert!(
                    e <= prev + 1e-6,
                    "energy rose {prev} -> {e} at sample {k}"
                );
                prev = e;
            }
            // And it must actually dissipate from a non-rest release.
            let first = pendulum_energy(&cfg, traj.state(0));
            assert!(prev < first - 1e-3, "no dissipation: {first} -> {prev}");
        }
    }

    #[test]
    fn undamped_energy_is_conserved() {
        let mut cfg = PendulumConfig::default();
        cfg.damping = 0.0;
        cfg.dt = 1e-4;
        cfg.horizon = 1.0;
        cfg.trajectories = 1;
        let ds = gen_pendulum(&cfg, 3).unwrap();
        let traj = &ds.trajectories[0];
        let e0 = pendulum_energy(&cfg, traj.state(0));
        let scale = e0.abs().max(1.0);
        for k in 0..traj.len() {
            let e = pendulum_energy(&cfg, traj.state(k));
            assert!(
                ((e - e0) / scale).abs() <= 1e-6,
                "energy drift at sample {k}: {e0} -> {e}"
            );
        }
    }

    #[test]
    fn damped_releases_settle_near_the_origin() {
        let cfg = PendulumConfig::default();
        let ds = gen_pendulum(&cfg, 42).unwrap();
        assert_eq!(ds.trajectories.len(), 6);
        for traj in &ds.trajectories {
            assert_eq!(traj.dim(), 4);
            assert!(traj.all_finite());
            let last = traj.last_state();
            let norm = last.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(norm <= 0.2, "|x(20)| = {norm}");
        }
    }

    #[test]
    fn velocity_samples_equal_the_field() {
        let cfg = PendulumConfig::default();
        let ds = gen_pendulum(&cfg, 1).unwrap();
        let traj = &ds.trajectories[0];
        let mut out = vec![0.0; 4];
        for k in [0usize, 10, 500] {
            pendulum_field(&cfg, traj.state(k), &mut out);
            assert_eq!(traj.velocity(k), &out[..], "sample {k}");
        }
    }

    #[test]
    fn per_trajectory_streams_are_stable_under_count_changes() {
        let mut cfg = PendulumConfig::default();
        cfg.horizon = 0.5;
        cfg.trajectories = 2;
        let small = gen_pendulum(&cfg, 9).unwrap();
        cfg.trajectories = 4;
        let large = gen_pendulum(&cfg, 9).unwrap();
        assert_eq!(small.trajectories[0], large.trajectories[0]);
        assert_eq!(small.trajectories[1], large.trajectories[1]);
    }

    #[test]
    fn config_validation_catches_mismatches() {
        let mut cfg = PendulumConfig::with_links(3);
        cfg.masses = vec![1.0; 2];
        assert!(cfg.validate().is_err());
        let mut cfg = PendulumConfig::default();
        cfg.dt = 0.0;
        assert!(cfg.validate().is_err());
    }
}
