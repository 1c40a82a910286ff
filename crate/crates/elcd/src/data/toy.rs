//! Closed-form demonstrations of the planar linear system
//! `dx/dt = A x` with `A = [[-1, 4], [0, -1]]`.
//!
//! `A` is Hurwitz (double eigenvalue -1) but its symmetric part
//! `[[-1, 2], [2, -1]]` has eigenvalues {1, -3}, so the system converges to
//! the origin without being contracting in the Euclidean metric — the
//! canonical case where a model must learn a coordinate change before it can
//! certify stability. The matrix exponential is
//! `e^{At} = e^{-t} [[1, 4t], [0, 1]]`, so both states and velocities are
//! sampled exactly (no integrator error).

use serde::{Deserialize, Serialize};

use super::{Dataset, Trajectory};

/// The system matrix `[[-1, 4], [0, -1]]` in row-major order.
pub const TOY_MATRIX: [f64; 4] = [-1.0, 4.0, 0.0, -1.0];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyLinearConfig {
    pub dt: f64,
    pub horizon: f64,
    /// Initial conditions; default is `(0, 2)` and `(0, -2)`.
    pub starts: Vec<[f64; 2]>,
}

impl Default for ToyLinearConfig {
    fn default() -> ToyLinearConfig {
        ToyLinearConfig {
            dt: 0.01,
            horizon: 5.0,
            starts: vec![[0.0, 2.0], [0.0, -2.0]],
        }
    }
}

/// Exact state at time `t` starting from `x0`.
pub fn toy_state(x0: [f64; 2], t: f64) -> [f64; 2] {
    let e = (-t).exp();
    [e * (x0[0] + 4.0 * t * x0[1]), e * x0[1]]
}

/// The vector field `A x`.
pub fn toy_field(x: &[f64]) -> [f64; 2] {
    [-x[0] + 4.0 * x[1], -x[1]]
}

pub fn gen_toy_linear_with(config: &ToyLinearConfig) -> Dataset {
    let steps = (config.horizon / config.dt).round() as usize;
    let trajectories = config
        .starts
        .iter()
        .map(|&x0| {
            let mut traj = Trajectory::new(2);
            for k in 0..=steps {
                let t = k as f64 * config.dt;
                let x = toy_state(x0, t);
                traj.push(t, &x, &toy_field(&x));
            }
            traj
        })
        .collect();
    Dataset::new(trajectories).with_meta(
        "toy-linear",
        serde_json::to_value(config).expect("config serializes"),
        None,
    )
}

pub fn gen_toy_linear() -> Dataset {
    gen_toy_linear_with(&ToyLinearConfig::default())
}
