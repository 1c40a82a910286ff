//! Fixed-step ODE integration of vector fields.
//!
//! Fields are plain closures `f(x, out)` writing `dx/dt` into `out`, so the
//! same integrator drives analytic systems (dataset generators), the fast
//! value-level model paths, and tape-evaluated composed models. A non-finite
//! state aborts with the step index: divergence is a diagnosis (the learned
//! field is broken or the step too large), never something to roll past.

use crate::data::Trajectory;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Euler,
    Rk4,
}

impl std::str::FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Scheme> {
        match s {
            "euler" => Ok(Scheme::Euler),
            "rk4" => Ok(Scheme::Rk4),
            other => Err(Error::Config(format!(
                "unknown integration scheme '{other}' (expected euler or rk4)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub scheme: Scheme,
    pub dt: f64,
    pub horizon: f64,
    /// Record every `record_stride`-th step (1 = every step). Generation can
    /// integrate finely but store at a coarser sampling interval.
    pub record_stride: usize,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            scheme: Scheme::Rk4,
            dt: 0.01,
            horizon: 1.0,
            record_stride: 1,
        }
    }
}

impl IntegratorConfig {
    pub fn rk4(dt: f64, horizon: f64) -> IntegratorConfig {
        IntegratorConfig {
            scheme: Scheme::Rk4,
            dt,
            horizon,
            ..Default::default()
        }
    }

    pub fn with_stride(mut self, record_stride: usize) -> IntegratorConfig {
        self.record_stride = record_stride;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if self.horizon < self.dt {
            return Err(Error::Config(format!(
                "horizon {} shorter than one step {}",
                self.horizon, self.dt
            )));
        }
        if self.record_stride == 0 {
            return Err(Error::Config("record stride must be at least 1".into()));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }
}

/// Integrate `dx/dt = field(x)` from `x0`, recording states and
/// field-evaluated velocities. The recorded velocity at each sample is the
/// exact field value at the recorded state.
pub fn integrate<F>(mut field: F, x0: &[f64], cfg: &IntegratorConfig) -> Result<Trajectory>
where
    F: FnMut(&[f64], &mut [f64]),
{
    cfg.validate()?;
    let d = x0.len();
    let steps = cfg.steps();
    let mut traj = Trajectory::new(d);
    let mut x = x0.to_vec();
    let mut k1 = vec![0.0; d];
    let mut k2 = vec![0.0; d];
    let mut k3 = vec![0.0; d];
    let mut k4 = vec![0.0; d];
    let mut stage = vec![0.0; d];

    for step in 0..=steps {
        let t = step as f64 * cfg.dt;
        field(&x, &mut k1);
        if step % cfg.record_stride == 0 || step == steps {
            traj.push(t, &x, &k1);
        }
        if step == steps {
            break;
        }
        match cfg.scheme {
            Scheme::Euler => {
                for i in 0..d {
                    x[i] += cfg.dt * k1[i];
                }
            }
            Scheme::Rk4 => {
                let h = cfg.dt;
                for i in 0..d {
                    stage[i] = x[i] + 0.5 * h * k1[i];
                }
                field(&stage, &mut k2);
                for i in 0..d {
                    stage[i] = x[i] + 0.5 * h * k2[i];
                }
                field(&stage, &mut k3);
                for i in 0..d {
                    stage[i] = x[i] + h * k3[i];
                }
                field(&stage, &mut k4);
                for i in 0..d {
                    x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
                }
            }
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::Diverged {
                step: step + 1,
                time: t + cfg.dt,
            });
        }
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_field_stays_constant() {
        let traj = integrate(
            |_x, out| out.fill(0.0),
            &[1.5, -2.0],
            &IntegratorConfig::rk4(0.1, 1.0),
        )
        .unwrap();
        assert_eq!(traj.len(), 11);
        for i in 0..traj.len() {
            assert_eq!(traj.state(i), &[1.5, -2.0]);
            assert_eq!(traj.velocity(i), &[0.0, 0.0]);
        }
    }

    #[test]
    fn linear_decay_matches_the_exponential() {
        let traj = integrate(
            |x, out| out[0] = -x[0],
            &[1.0],
            &IntegratorConfig::rk4(0.01, 1.0),
        )
        .unwrap();
        let end = traj.state(traj.len() - 1)[0];
        assert!(
            (end - (-1.0_f64).exp()).abs() <= 1e-6,
            "x(1) = {end} vs e^-1"
        );
    }

    #[test]
    fn euler_and_rk4_agree_to_first_order() {
        let dt = 0.01;
        let cfg_e = IntegratorConfig {
            scheme: Scheme::Euler,
            dt,
            horizon: 1.0,
            record_stride: 1,
        };
        let cfg_r = IntegratorConfig::rk4(dt, 1.0);
        let e = integrate(|x, out| out[0] = -x[0], &[1.0], &cfg_e).unwrap();
        let r = integrate(|x, out| out[0] = -x[0], &[1.0], &cfg_r).unwrap();
        let diff = (e.state(e.len() - 1)[0] - r.state(r.len() - 1)[0]).abs();
        assert!(diff <= 5.0 * dt, "euler vs rk4 difference {diff}");
    }

    #[test]
    fn divergence_reports_the_step() {
        let err = integrate(
            |x, out| out[0] = x[0] * x[0],
            &[10.0],
            &IntegratorConfig::rk4(0.1, 100.0),
        )
        .unwrap_err();
        match err {
            Error::Diverged { step, .. } => assert!(step > 0),
            other => panic!("expected divergence, got {other}"),
        }
    }

    #[test]
    fn record_stride_thins_samples_but_keeps_endpoints() {
        let cfg = IntegratorConfig::rk4(0.01, 1.0).with_stride(10);
        let traj = integrate(|x, out| out[0] = -x[0], &[1.0], &cfg).unwrap();
        assert_eq!(traj.len(), 11);
        assert_eq!(traj.time(0), 0.0);
        assert!((traj.time(10) - 1.0).abs() < 1e-12);
    }
}
