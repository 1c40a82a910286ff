//! Numerical certification of contraction properties.
//!
//! Everything here is sampled diagnostics, not symbolic proof: rollout
//! checks of the equilibrium decay bound `‖x(t) - x*‖ ≤ e^{-αt}‖x0 - x*‖`,
//! the variational flow `Ẏ = Df(φ(t,x)) Y`, the converse contraction metric
//!
//! ```text
//! M(x) = ∫₀^∞ ψ(τ,x)ᵀ C(φ(τ,x)) ψ(τ,x) dτ
//! ```
//!
//! by truncated trapezoidal quadrature, the metric PDE residual
//! `M Df + Dfᵀ M + Ṁ + C` (with `Ṁ` realized as a finite difference of `M`
//! along the flow), the pointwise contraction inequality
//! `M Df + Dfᵀ M + Ṁ ⪯ -2c M`, and a dense Lyapunov-equation oracle for
//! linear fields.

use std::fmt;

use crate::error::{Error, Result};
use crate::linalg::{symmetric_eigenvalues, LuFactors};
use crate::rollout::{integrate, IntegratorConfig};
use crate::Tensor;

// ── small matrix helpers ────────────────────────────────────────────────────

fn sym(a: &Tensor) -> Tensor {
    let n = a.rows();
    Tensor::from_fn(&[n, n], |idx| {
        let (i, j) = (idx / n, idx % n);
        0.5 * (a.get(i, j) + a.get(j, i))
    })
}

fn sym_min_eig(a: &Tensor) -> f64 {
    symmetric_eigenvalues(a)[0]
}

fn sym_max_eig(a: &Tensor) -> f64 {
    *symmetric_eigenvalues(a).last().expect("empty matrix")
}

/// One classical RK4 step of `field` from `x` over `h`.
fn flow_step<F>(field: &mut F, x: &[f64], h: f64) -> Vec<f64>
where
    F: FnMut(&[f64], &mut [f64]),
{
    let d = x.len();
    let mut k1 = vec![0.0; d];
    let mut k2 = vec![0.0; d];
    let mut k3 = vec![0.0; d];
    let mut k4 = vec![0.0; d];
    let mut tmp = vec![0.0; d];
    field(x, &mut k1);
    for i in 0..d {
        tmp[i] = x[i] + 0.5 * h * k1[i];
    }
    field(&tmp, &mut k2);
    for i in 0..d {
        tmp[i] = x[i] + 0.5 * h * k2[i];
    }
    field(&tmp, &mut k3);
    for i in 0..d {
        tmp[i] = x[i] + h * k3[i];
    }
    field(&tmp, &mut k4);
    (0..d)
        .map(|i| x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect()
}

// ── equilibrium decay bound ─────────────────────────────────────────────────

/// Result of checking `‖x(t) - x*‖ ≤ e^{-αt} ‖x(0) - x*‖` along rollouts.
#[derive(Clone, Debug)]
pub struct BoundViolation {
    /// Max relative violation per rollout:
    /// `max_t ‖x(t) - x*‖ / (e^{-αt}‖x0 - x*‖) - 1` (infinite if the
    /// rollout diverged).
    pub per_rollout: Vec<f64>,
    pub max: f64,
    /// Indices of rollouts that produced non-finite states.
    pub diverged: Vec<usize>,
}

impl BoundViolation {
    pub fn pass(&self, tolerance: f64) -> bool {
        self.diverged.is_empty() && self.max <= tolerance
    }
}

/// Roll `field` out from each start and measure the worst relative violation
/// of the exponential decay bound with rate `alpha` toward `x_star`.
/// Divergence is recorded as a failed rollout, not an error.
pub fn equilibrium_bound_check<F>(
    mut field: F,
    x_star: &[f64],
    alpha: f64,
    starts: &[Vec<f64>],
    cfg: &IntegratorConfig,
) -> BoundViolation
where
    F: FnMut(&[f64], &mut [f64]),
{
    let mut per_rollout = Vec::with_capacity(starts.len());
    let mut diverged = Vec::new();
    let dist = |x: &[f64]| -> f64 {
        x.iter()
            .zip(x_star)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    };
    for (idx, x0) in starts.iter().enumerate() {
        let r0 = dist(x0);
        if r0 == 0.0 {
            per_rollout.push(0.0);
            continue;
        }
        match integrate(&mut field, x0, cfg) {
            Ok(traj) => {
                let t0 = traj.time(0);
                let mut worst = f64::NEG_INFINITY;
                for k in 0..traj.len() {
                    let allowed = (-alpha * (traj.time(k) - t0)).exp() * r0;
                    let ratio = dist(traj.state(k)) / allowed - 1.0;
                    if ratio > worst {
                        worst = ratio;
                    }
                }
                per_rollout.push(worst);
            }
            Err(_) => {
                per_rollout.push(f64::INFINITY);
                diverged.push(idx);
            }
        }
    }
    let max = per_rollout.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    BoundViolation {
        per_rollout,
        max,
        diverged,
    }
}

// ── variational flow ────────────────────────────────────────────────────────

/// Nodes of the joint integration of `ẋ = f(x)` and `Ẏ = Df(x) Y, Y(0) = I`.
#[derive(Clone, Debug)]
pub struct VariationalFlow {
    pub dim: usize,
    pub times: Vec<f64>,
    states: Vec<f64>,
    matrices: Vec<f64>,
}

impl VariationalFlow {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn state(&self, k: usize) -> &[f64] {
        &self.states[k * self.dim..(k + 1) * self.dim]
    }

    /// `ψ(τ_k, x)` as a d×d matrix.
    pub fn matrix(&self, k: usize) -> Tensor {
        let d = self.dim;
        Tensor::matrix(d, d, self.matrices[k * d * d..(k + 1) * d * d].to_vec())
    }
}

/// One RK4 step of the augmented system `(x, Y)`, `Y` row-major in place.
fn joint_step<F, J>(field: &mut F, jacobian: &mut J, x: &mut Vec<f64>, y: &mut Vec<f64>, h: f64)
where
    F: FnMut(&[f64], &mut [f64]),
    J: FnMut(&[f64], &mut [f64]),
{
    let d = x.len();
    let dd = d * d;
    let mut z = Vec::with_capacity(d + dd);
    z.extend_from_slice(x);
    z.extend_from_slice(y);
    let mut jac = vec![0.0; dd];
    let mut rhs = move |field: &mut F, jacobian: &mut J, z: &[f64], out: &mut [f64]| {
        field(&z[..d], &mut out[..d]);
        jacobian(&z[..d], &mut jac);
        // dY/dt = J Y.
        for i in 0..d {
            for j in 0..d {
                let mut acc = 0.0;
                for k in 0..d {
                    acc += jac[i * d + k] * z[d + k * d + j];
                }
                out[d + i * d + j] = acc;
            }
        }
    };
    let n = d + dd;
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    rhs(field, jacobian, &z, &mut k1);
    for i in 0..n {
        tmp[i] = z[i] + 0.5 * h * k1[i];
    }
    rhs(field, jacobian, &tmp, &mut k2);
    for i in 0..n {
        tmp[i] = z[i] + 0.5 * h * k2[i];
    }
    rhs(field, jacobian, &tmp, &mut k3);
    for i in 0..n {
        tmp[i] = z[i] + h * k3[i];
    }
    rhs(field, jacobian, &tmp, &mut k4);
    for i in 0..n {
        z[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    x.copy_from_slice(&z[..d]);
    y.copy_from_slice(&z[d..]);
}

/// Jointly integrate the base and variational ODEs from `x0` with `Y(0) = I`
/// and record `(τ, φ(τ, x0), ψ(τ, x0))` at every `record_stride`-th node.
pub fn variational_flow<F, J>(
    mut field: F,
    mut jacobian: J,
    x0: &[f64],
    cfg: &IntegratorConfig,
) -> Result<VariationalFlow>
where
    F: FnMut(&[f64], &mut [f64]),
    J: FnMut(&[f64], &mut [f64]),
{
    cfg.validate()?;
    let d = x0.len();
    let mut x = x0.to_vec();
    let mut y = Tensor::eye(d).data().to_vec();
    let steps = cfg.steps();
    let mut flow = VariationalFlow {
        dim: d,
        times: Vec::new(),
        states: Vec::new(),
        matrices: Vec::new(),
    };
    let record = |t: f64, x: &[f64], y: &[f64], flow: &mut VariationalFlow| {
        flow.times.push(t);
        flow.states.extend_from_slice(x);
        flow.matrices.extend_from_slice(y);
    };
    record(0.0, &x, &y, &mut flow);
    for step in 1..=steps {
        joint_step(&mut field, &mut jacobian, &mut x, &mut y, cfg.dt);
        let t = step as f64 * cfg.dt;
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Diverged { step, time: t });
        }
        if step % cfg.record_stride == 0 || step == steps {
            record(t, &x, &y, &mut flow);
        }
    }
    Ok(flow)
}

// ── converse contraction metric ─────────────────────────────────────────────

/// Quadrature configuration for [`converse_metric`].
#[derive(Clone, Debug)]
pub struct ConverseMetricConfig {
    /// Integrator / quadrature step.
    pub dt: f64,
    /// Hard truncation horizon (pick ≈ 50/rate for a rate-`α` field).
    pub t_max: f64,
    /// Stop early once `‖ψ(τ)‖_F` falls below this.
    pub tail_tol: f64,
}

impl ConverseMetricConfig {
    /// Defaults scaled for a field contracting at rate `alpha`.
    pub fn for_rate(alpha: f64) -> ConverseMetricConfig {
        ConverseMetricConfig {
            dt: 1e-3,
            t_max: 50.0 / alpha,
            tail_tol: 1e-6,
        }
    }
}

impl Default for ConverseMetricConfig {
    fn default() -> ConverseMetricConfig {
        ConverseMetricConfig::for_rate(1.0)
    }
}

/// A numerically constructed metric sample `M(x)`.
#[derive(Clone, Debug)]
pub struct MetricSample {
    pub point: Vec<f64>,
    /// Symmetrized quadrature result.
    pub metric: Tensor,
    /// Horizon actually integrated (early-stopped or `t_max`).
    pub horizon: f64,
    /// `‖ψ‖_F` at truncation — the auditable tail estimate.
    pub tail: f64,
}

impl MetricSample {
    pub fn min_eigenvalue(&self) -> f64 {
        sym_min_eig(&self.metric)
    }

    pub fn max_eigenvalue(&self) -> f64 {
        sym_max_eig(&self.metric)
    }
}

/// Converse metric `M(x) = ∫₀^T ψᵀψ dτ` with `C = I` (trapezoid rule,
/// truncated once `‖ψ‖_F ≤ tail_tol` or at `t_max`, whichever is first).
/// Errors with the measured `‖ψ(t_max)‖` when the variational flow has not
/// decayed — the signature of a non-contracting field.
pub fn converse_metric<F, J>(
    field: F,
    jacobian: J,
    x: &[f64],
    cfg: &ConverseMetricConfig,
) -> Result<MetricSample>
where
    F: FnMut(&[f64], &mut [f64]),
    J: FnMut(&[f64], &mut [f64]),
{
    converse_metric_with(field, jacobian, |_, c| {
        let d = c.rows();
        *c = Tensor::eye(d);
    }, x, cfg)
}

/// [`converse_metric`] with a caller-supplied weight `C(x)` (written into
/// the provided matrix at each node).
pub fn converse_metric_with<F, J, C>(
    mut field: F,
    mut jacobian: J,
    mut weight: C,
    x0: &[f64],
    cfg: &ConverseMetricConfig,
) -> Result<MetricSample>
where
    F: FnMut(&[f64], &mut [f64]),
    J: FnMut(&[f64], &mut [f64]),
    C: FnMut(&[f64], &mut Tensor),
{
    if !(cfg.dt > 0.0) || !(cfg.t_max >= cfg.dt) || !(cfg.tail_tol > 0.0) {
        return Err(Error::Config(
            "converse metric needs dt > 0, t_max >= dt, tail_tol > 0".into(),
        ));
    }
    let d = x0.len();
    let mut x = x0.to_vec();
    let mut y = Tensor::eye(d).data().to_vec();
    let mut c = Tensor::eye(d);

    // g(τ) = ψᵀ C(φ) ψ at the current node.
    let integrand = |x: &[f64], y: &[f64], c: &mut Tensor, weight: &mut C| -> Tensor {
        weight(x, c);
        let psi = Tensor::matrix(d, d, y.to_vec());
        psi.transposed().matmul_value(&c.matmul_value(&psi))
    };
    let frob = |y: &[f64]| y.iter().map(|v| v * v).sum::<f64>().sqrt();

    let mut acc = Tensor::zeros(&[d, d]);
    let mut prev = integrand(&x, &y, &mut c, &mut weight);
    let steps = (cfg.t_max / cfg.dt).ceil() as usize;
    let mut horizon = 0.0;
    let mut tail = frob(&y);
    let mut decayed = false;
    for step in 1..=steps {
        joint_step(&mut field, &mut jacobian, &mut x, &mut y, cfg.dt);
        horizon = step as f64 * cfg.dt;
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Diverged {
                step,
                time: horizon,
            });
        }
        let g = integrand(&x, &y, &mut c, &mut weight);
        let mut panel = g.clone();
        panel.add_assign(&prev);
        panel.scale_in_place(0.5 * cfg.dt);
        acc.add_assign(&panel);
        prev = g;
        tail = frob(&y);
        if tail <= cfg.tail_tol {
            decayed = true;
            break;
        }
    }
    if !decayed {
        return Err(Error::NoDecay {
            t_max: cfg.t_max,
            norm: tail,
        });
    }
    Ok(MetricSample {
        point: x0.to_vec(),
        metric: sym(&acc),
        horizon,
        tail,
    })
}

// ── metric PDE residual ─────────────────────────────────────────────────────

/// Residual of the contraction-metric PDE, `M Df + Dfᵀ M + Ṁ + C` with
/// `C = I`, where `Ṁ` (the derivative of `M` along the flow) is the forward
/// difference `(M(φ(h, x)) - M(x)) / h` over one RK4 step of size `h`.
pub fn metric_residual<F, J, M>(
    mut field: F,
    mut jacobian: J,
    mut metric_fn: M,
    x: &[f64],
    h: f64,
) -> Result<Tensor>
where
    F: FnMut(&[f64], &mut [f64]),
    J: FnMut(&[f64], &mut [f64]),
    M: FnMut(&[f64]) -> Result<Tensor>,
{
    let d = x.len();
    let m_here = metric_fn(x)?;
    let ahead = flow_step(&mut field, x, h);
    let m_ahead = metric_fn(&ahead)?;
    let mut m_dot = m_ahead;
    let mut neg = m_here.clone();
    neg.scale_in_place(-1.0);
    m_dot.add_assign(&neg);
    m_dot.scale_in_place(1.0 / h);

    let mut jac = vec![0.0; d * d];
    jacobian(x, &mut jac);
    let df = Tensor::matrix(d, d, jac);
    let mut res = m_here.matmul_value(&df);
    res.add_assign(&df.transposed().matmul_value(&m_here));
    res.add_assign(&m_dot);
    res.add_assign(&Tensor::eye(d));
    Ok(res)
}

// ── pointwise contraction inequality ────────────────────────────────────────

/// One sample of the contraction inequality
/// `M Df + Dfᵀ M + Ṁ ⪯ -2c M` (checked as `λ_max` of the symmetrized
/// left-plus-`2cM` matrix).
#[derive(Clone, Debug)]
pub struct ContractionSample {
    pub point: Vec<f64>,
    /// `λ_max(sym(M Df + Dfᵀ M + Ṁ + 2c M))`; nonpositive means the
    /// inequality holds at this point.
    pub lambda_max: f64,
    /// `λ_min(M)` — must be positive for the sample to count.
    pub metric_min_eig: f64,
    pub pass: bool,
}

/// Outcome of [`contraction_check`] over a sample set.
#[derive(Clone, Debug)]
pub struct ContractionAssessment {
    pub samples: Vec<ContractionSample>,
    pub rate: f64,
    pub tolerance: f64,
    pub pass: bool,
    /// Largest rate that would still pass on this sample set (0 when even
    /// rate 0 fails).
    pub achieved_rate: f64,
}

/// Binary-search the largest `c ≥ 0` with `λ_max(G + 2cM) ≤ 0` for the
/// (symmetric) inequality matrix `G` at rate 0.
fn achieved_rate(g0: &Tensor, m: &Tensor) -> f64 {
    let lam_g = sym_max_eig(g0);
    if lam_g > 0.0 {
        return 0.0;
    }
    let m_min = sym_min_eig(m);
    if m_min <= 0.0 {
        return 0.0;
    }
    let mut lo = 0.0;
    let mut hi = -lam_g / (2.0 * m_min) + 1e-12;
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        let mut trial = m.clone();
        trial.scale_in_place(2.0 * mid);
        trial.add_assign(g0);
        if sym_max_eig(&trial) <= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Evaluate the contraction inequality at each point with metric `metric_fn`
/// and rate `c`; `Ṁ` uses the flow finite difference with step `h`.
pub fn contraction_check<F, J, M>(
    mut field: F,
    mut jacobian: J,
    mut metric_fn: M,
    c: f64,
    points: &[Vec<f64>],
    h: f64,
    tolerance: f64,
) -> Result<ContractionAssessment>
where
    F: FnMut(&[f64], &mut [f64]),
    J: FnMut(&[f64], &mut [f64]),
    M: FnMut(&[f64]) -> Result<Tensor>,
{
    let mut samples = Vec::with_capacity(points.len());
    let mut min_achieved = f64::INFINITY;
    for x in points {
        let d = x.len();
        let m_here = metric_fn(x)?;
        let metric_min_eig = sym_min_eig(&m_here);

        let m_ahead = metric_fn(&flow_step(&mut field, x, h))?;
        let mut m_dot = m_ahead;
        let mut neg = m_here.clone();
        neg.scale_in_place(-1.0);
        m_dot.add_assign(&neg);
        m_dot.scale_in_place(1.0 / h);

        let mut jac = vec![0.0; d * d];
        jacobian(x, &mut jac);
        let df = Tensor::matrix(d, d, jac);
        let mut g0 = m_here.matmul_value(&df);
        g0.add_assign(&df.transposed().matmul_value(&m_here));
        g0.add_assign(&m_dot);
        let g0 = sym(&g0);

        let mut g = m_here.clone();
        g.scale_in_place(2.0 * c);
        g.add_assign(&g0);
        let lambda_max = sym_max_eig(&g);
        let pass = metric_min_eig > 0.0 && lambda_max <= tolerance;
        min_achieved = min_achieved.min(achieved_rate(&g0, &m_here));
        samples.push(ContractionSample {
            point: x.clone(),
            lambda_max,
            metric_min_eig,
            pass,
        });
    }
    let pass = samples.iter().all(|s| s.pass);
    Ok(ContractionAssessment {
        samples,
        rate: c,
        tolerance,
        pass,
        achieved_rate: if min_achieved.is_finite() {
            min_achieved
        } else {
            0.0
        },
    })
}

// ── dense Lyapunov oracle ───────────────────────────────────────────────────

/// Solve `M A + Aᵀ M = -C` by the vectorized d²×d² linear system. By
/// Lyapunov's theorem the solution exists and is positive definite exactly
/// when `A` is Hurwitz (for SPD `C`), so an unsolvable system or a non-PD
/// solution reports `A` as not Hurwitz — no separate eigenvalue test needed.
pub fn lyapunov_oracle(a: &Tensor, c: &Tensor) -> Result<Tensor> {
    let d = a.rows();
    assert_eq!(a.cols(), d, "lyapunov_oracle needs square A");
    assert_eq!(c.shape(), &[d, d], "C must match A");
    let n = d * d;
    let mut big = vec![0.0; n * n];
    let mut rhs = vec![0.0; n];
    for i in 0..d {
        for j in 0..d {
            let eq = i * d + j;
            rhs[eq] = -c.get(i, j);
            // Σ_k M_{ik} A_{kj} contributes A_{qj} at unknown (i, q).
            for q in 0..d {
                big[eq * n + (i * d + q)] += a.get(q, j);
            }
            // Σ_k A_{ki} M_{kj} contributes A_{pi} at unknown (p, j).
            for p in 0..d {
                big[eq * n + (p * d + j)] += a.get(p, i);
            }
        }
    }
    let lu = LuFactors::factor(&Tensor::matrix(n, n, big)).map_err(|_| Error::NotHurwitz {
        reason: "Lyapunov system singular (eigenvalue pair sums to zero)".into(),
    })?;
    let m = Tensor::matrix(d, d, lu.solve(&rhs));
    let m = sym(&m);
    let min_eig = sym_min_eig(&m);
    if min_eig <= 0.0 {
        return Err(Error::NotHurwitz {
            reason: format!("Lyapunov solution not positive definite (λ_min = {min_eig:.3e})"),
        });
    }
    Ok(m)
}

// ── report assembly ─────────────────────────────────────────────────────────

/// One named pass/fail line with its measured value and tolerance.
#[derive(Clone, Debug)]
pub struct CheckOutcome {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl CheckOutcome {
    pub fn new(name: &str, value: f64, tolerance: f64) -> CheckOutcome {
        CheckOutcome {
            name: name.to_string(),
            value,
            tolerance,
            pass: value <= tolerance,
        }
    }
}

/// Aggregated verification evidence for one model:
/// per-sample metric-PDE residual norms, per-rollout decay-bound violations,
/// the contraction rate achieved on the sample set, and named check lines.
#[derive(Clone, Debug, Default)]
pub struct VerifyReport {
    pub residual_norms: Vec<f64>,
    pub bound_violations: Vec<f64>,
    pub achieved_rate: f64,
    pub checks: Vec<CheckOutcome>,
}

impl VerifyReport {
    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    /// `name,value,tolerance,pass` CSV rows (with header).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("check,value,tolerance,pass\n");
        for c in &self.checks {
            out.push_str(&format!("{},{},{},{}\n", c.name, c.value, c.tolerance, c.pass));
        }
        out
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(
                f,
                "{} {:<44} value {:>12.4e}  tol {:>9.1e}",
                if c.pass { "PASS" } else { "FAIL" },
                c.name,
                c.value,
                c.tolerance
            )?;
        }
        if !self.bound_violations.is_empty() {
            writeln!(
                f,
                "decay-bound violations: max {:.3e} over {} rollouts",
                self.bound_violations
                    .iter()
                    .cloned()
                    .fold(f64::NEG_INFINITY, f64::max),
                self.bound_violations.len()
            )?;
        }
        if !self.residual_norms.is_empty() {
            writeln!(
                f,
                "metric PDE residuals: max {:.3e} over {} samples",
                self.residual_norms
                    .iter()
                    .cloned()
                    .fold(f64::NEG_INFINITY, f64::max),
                self.residual_norms.len()
            )?;
        }
        writeln!(f, "achieved contraction rate: {:.6}", self.achieved_rate)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::elcd::{randomize_params, ElcdConfig, ElcdModel};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn linear_field(a: &Tensor) -> impl FnMut(&[f64], &mut [f64]) + '_ {
        move |x, out| out.copy_from_slice(&a.matvec_value(x))
    }

    fn linear_jacobian(a: &Tensor) -> impl FnMut(&[f64], &mut [f64]) + '_ {
        move |_, out| out.copy_from_slice(a.data())
    }

    fn frob(t: &Tensor) -> f64 {
        t.norm()
    }

    // ── equilibrium bound ───────────────────────────────────────────────────

    #[test]
    fn pure_decay_saturates_the_bound() {
        let alpha = 0.3;
        let x_star = [1.0, -2.0];
        let field = |x: &[f64], out: &mut [f64]| {
            for i in 0..2 {
                out[i] = -alpha * (x[i] - x_star[i]);
            }
        };
        let starts = vec![vec![3.0, 0.5], vec![-4.0, 1.0], vec![1.0, -2.0]];
        let cfg = IntegratorConfig::rk4(1e-3, 3.0);
        let check = equilibrium_bound_check(field, &x_star, alpha, &starts, &cfg);
        // The bound holds with equality analytically; only integrator error
        // remains. The start exactly at x* contributes 0 by convention.
        assert!(check.max.abs() <= 1e-6, "violation {}", check.max);
        assert!(check.pass(1e-6));
        assert_eq!(check.per_rollout.len(), 3);
    }

    #[test]
    fn fresh_elcd_models_satisfy_the_decay_bound() {
        let cfg = IntegratorConfig::rk4(1e-3, 3.0);
        for seed in 0..3u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut model = ElcdModel::new(ElcdConfig::with_dim(2), "m", &mut rng);
            randomize_params(&mut model, 0.3, &mut rng);
            model.set_equilibrium(&[0.3, -0.8]);
            let x_star = model.equilibrium().value().data().to_vec();
            let starts: Vec<Vec<f64>> = (0..20)
                .map(|_| (0..2).map(|_| rng.gen_range(-2.0..2.0)).collect())
                .collect();
            let check = equilibrium_bound_check(
                |x, out| out.copy_from_slice(&model.field_standalone_f64(x)),
                &x_star,
                model.alpha(),
                &starts,
                &cfg,
            );
            assert!(
                check.pass(1e-3),
                "seed {seed}: max violation {}",
                check.max
            );
        }
    }

    #[test]
    fn expanding_field_fails_the_bound() {
        let field = |x: &[f64], out: &mut [f64]| {
            for (o, v) in out.iter_mut().zip(x) {
                *o = *v;
            }
        };
        let cfg = IntegratorConfig::rk4(1e-2, 2.0);
        let check =
            equilibrium_bound_check(field, &[0.0, 0.0], 0.05, &[vec![1.0, 0.0]], &cfg);
        assert!(check.max > 1.0, "expanding field must violate: {}", check.max);
        assert!(!check.pass(1e-3));
    }

    // ── variational flow ────────────────────────────────────────────────────

    #[test]
    fn variational_flow_of_minus_identity_is_scalar_exponential() {
        let a = Tensor::matrix(2, 2, vec![-1.0, 0.0, 0.0, -1.0]);
        let cfg = IntegratorConfig::rk4(1e-3, 1.0);
        let flow =
            variational_flow(linear_field(&a), linear_jacobian(&a), &[0.7, -0.2], &cfg).unwrap();
        // ψ(0) = I exactly.
        let first = flow.matrix(0);
        assert_eq!(first.data(), Tensor::eye(2).data());
        // ψ(1) = e^{-1} I.
        let last = flow.matrix(flow.len() - 1);
        let e1 = (-1.0f64).exp();
        for i in 0..2 {
            for j in 0..2 {
                let want = if i == j { e1 } else { 0.0 };
                assert!((last.get(i, j) - want).abs() <= 1e-6, "{i}{j}");
            }
        }
    }

    #[test]
    fn liouville_identity_holds_along_nonlinear_flow() {
        // f(x, y) = (-x + sin y, -y + 0.3 x²), Df = [[-1, cos y], [0.6x, -1]].
        let field = |x: &[f64], out: &mut [f64]| {
            out[0] = -x[0] + x[1].sin();
            out[1] = -x[1] + 0.3 * x[0] * x[0];
        };
        let jacobian = |x: &[f64], out: &mut [f64]| {
            out[0] = -1.0;
            out[1] = x[1].cos();
            out[2] = 0.6 * x[0];
            out[3] = -1.0;
        };
        let cfg = IntegratorConfig::rk4(1e-3, 2.0);
        let flow = variational_flow(field, jacobian, &[1.2, -0.4], &cfg).unwrap();
        let dets: Vec<f64> = (0..flow.len())
            .map(|k| crate::linalg::determinant(&flow.matrix(k)))
            .collect();
        let mut jac = [0.0; 4];
        for k in 1..flow.len() - 1 {
            let d_det = (dets[k + 1] - dets[k - 1]) / (2.0 * cfg.dt);
            jacobian(flow.state(k), &mut jac);
            let expected = (jac[0] + jac[3]) * dets[k];
            assert!(
                ((d_det - expected) / expected.abs().max(1e-12)).abs() <= 1e-4,
                "node {k}: d(det)/dτ {d_det} vs trace·det {expected}"
            );
        }
    }

    // ── converse metric ─────────────────────────────────────────────────────

    #[test]
    fn scalar_decay_gives_one_half() {
        let a = Tensor::matrix(1, 1, vec![-1.0]);
        let cfg = ConverseMetricConfig::for_rate(1.0);
        let sample = converse_metric(linear_field(&a), linear_jacobian(&a), &[0.4], &cfg).unwrap();
        assert!(
            (sample.metric.get(0, 0) - 0.5).abs() <= 1e-4,
            "M = {}",
            sample.metric.get(0, 0)
        );
        assert!(sample.tail <= cfg.tail_tol);
        assert!(sample.horizon < cfg.t_max);
    }

    #[test]
    fn converse_metric_matches_lyapunov_solution_on_linear_fields() {
        let mut rng = ChaCha8Rng::seed_from_u64(314);
        for dim in [1usize, 2, 4] {
            // Random Hurwitz A = S - 2I with ‖S‖_F ≤ 1.2 < 2.
            let a = match dim {
                2 => Tensor::matrix(2, 2, vec![-1.0, 1.0, 0.0, -1.0]),
                _ => Tensor::from_fn(&[dim, dim], |idx| {
                    let (i, j) = (idx / dim, idx % dim);
                    let s = rng.gen_range(-0.3..0.3);
                    if i == j {
                        s - 2.0
                    } else {
                        s
                    }
                }),
            };
            let point = vec![0.1; dim];
            let cfg = ConverseMetricConfig::for_rate(0.5);
            let sample =
                converse_metric(linear_field(&a), linear_jacobian(&a), &point, &cfg).unwrap();
            let exact = lyapunov_oracle(&a, &Tensor::eye(dim)).unwrap();
            let mut diff = sample.metric.clone();
            let mut neg = exact.clone();
            neg.scale_in_place(-1.0);
            diff.add_assign(&neg);
            let rel = frob(&diff) / frob(&exact);
            assert!(rel <= 1e-3, "dim {dim}: rel err {rel}");
            assert!(sample.min_eigenvalue() > 0.0);
            assert!(sample.max_eigenvalue() >= sample.min_eigenvalue());
        }
    }

    #[test]
    fn pure_decay_metric_is_identity_over_two_alpha() {
        // f = -α(x - x*): ψ(τ) = e^{-ατ}I, M = ∫ e^{-2ατ} dτ = I/(2α).
        let alpha = 0.5;
        let x_star = [0.2, -0.7];
        let field = move |x: &[f64], out: &mut [f64]| {
            for i in 0..2 {
                out[i] = -alpha * (x[i] - x_star[i]);
            }
        };
        let jacobian = move |_: &[f64], out: &mut [f64]| {
            out.copy_from_slice(&[-alpha, 0.0, 0.0, -alpha]);
        };
        let cfg = ConverseMetricConfig::for_rate(alpha);
        let sample = converse_metric(field, jacobian, &[5.0, 3.0], &cfg).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let want = if i == j { 1.0 / (2.0 * alpha) } else { 0.0 };
                assert!(
                    (sample.metric.get(i, j) - want).abs() <= 1e-4,
                    "entry {i}{j}: {}",
                    sample.metric.get(i, j)
                );
            }
        }
    }

    #[test]
    fn non_contracting_field_reports_no_decay() {
        let a = Tensor::matrix(1, 1, vec![1.0]);
        let cfg = ConverseMetricConfig {
            dt: 1e-2,
            t_max: 5.0,
            tail_tol: 1e-6,
        };
        let err = converse_metric(linear_field(&a), linear_jacobian(&a), &[1.0], &cfg).unwrap_err();
        match err {
            Error::NoDecay { t_max, norm } => {
                assert_eq!(t_max, 5.0);
                assert!(norm > 100.0, "ψ should have grown to e^5: {norm}");
            }
            other => panic!("expected NoDecay, got {other}"),
        }
    }

    // ── metric PDE residual ─────────────────────────────────────────────────

    #[test]
    fn constant_lyapunov_metric_zeroes_the_residual() {
        let a = Tensor::matrix(2, 2, vec![-1.0, 1.0, 0.0, -1.0]);
        let m = lyapunov_oracle(&a, &Tensor::eye(2)).unwrap();
        let res = metric_residual(
            linear_field(&a),
            linear_jacobian(&a),
            |_| Ok(m.clone()),
            &[0.3, -0.9],
            1e-4,
        )
        .unwrap();
        assert!(frob(&res) <= 1e-8, "residual {}", frob(&res));
    }

    #[test]
    fn zero_network_elcd_residual_with_its_exact_metric() {
        // Networks at zero make f = -α(x - x*); M = I/(2α) solves the PDE.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut cfg = ElcdConfig::with_dim(2);
        cfg.alpha = 0.05;
        let model = ElcdModel::new(cfg, "m", &mut rng);
        let m = {
            let mut t = Tensor::eye(2);
            t.scale_in_place(1.0 / (2.0 * 0.05));
            t
        };
        let res = metric_residual(
            |x, out| out.copy_from_slice(&model.field_standalone_f64(x)),
            |x, out| out.copy_from_slice(model.jacobian_f64(x).data()),
            |_| Ok(m.clone()),
            &[1.1, -0.4],
            1e-4,
        )
        .unwrap();
        assert!(frob(&res) <= 1e-6, "residual {}", frob(&res));
    }

    #[test]
    fn converse_metric_nearly_solves_the_pde_for_a_random_elcd() {
        // Rate 1 and a coarser quadrature keep the 10-point sweep quick;
        // the 1e-2 budget absorbs quadrature + finite-difference error.
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut ec = ElcdConfig::with_dim(2);
        ec.alpha = 1.0;
        let mut model = ElcdModel::new(ec, "m", &mut rng);
        randomize_params(&mut model, 0.1, &mut rng);
        let qcfg = ConverseMetricConfig {
            dt: 1e-2,
            t_max: 50.0,
            tail_tol: 1e-6,
        };
        let field = |x: &[f64], out: &mut [f64]| out.copy_from_slice(&model.field_standalone_f64(x));
        let jacobian =
            |x: &[f64], out: &mut [f64]| out.copy_from_slice(model.jacobian_f64(x).data());
        let metric_fn = |x: &[f64]| -> Result<Tensor> {
            Ok(converse_metric(field, jacobian, x, &qcfg)?.metric)
        };
        for k in 0..10 {
            let x: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let res = metric_residual(field, jacobian, metric_fn, &x, 1e-4).unwrap();
            assert!(frob(&res) <= 1e-2, "point {k}: residual {}", frob(&res));
        }
    }

    // ── contraction inequality ──────────────────────────────────────────────

    #[test]
    fn scalar_rate_boundary_cases() {
        let a = Tensor::matrix(1, 1, vec![-1.0]);
        let m = Tensor::matrix(1, 1, vec![0.5]);
        let points = vec![vec![0.3]];
        let pass_case = contraction_check(
            linear_field(&a),
            linear_jacobian(&a),
            |_| Ok(m.clone()),
            0.99,
            &points,
            1e-4,
            0.0,
        )
        .unwrap();
        assert!(pass_case.pass);
        assert!((pass_case.samples[0].lambda_max + 0.01).abs() <= 1e-12);
        assert!((pass_case.achieved_rate - 1.0).abs() <= 1e-9);

        let fail_case = contraction_check(
            linear_field(&a),
            linear_jacobian(&a),
            |_| Ok(m.clone()),
            1.01,
            &points,
            1e-4,
            0.0,
        )
        .unwrap();
        assert!(!fail_case.pass);
        assert!((fail_case.samples[0].lambda_max - 0.01).abs() <= 1e-12);
    }

    #[test]
    fn zero_network_elcd_sits_exactly_on_the_boundary() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let model = ElcdModel::new(ElcdConfig::with_dim(3), "m", &mut rng);
        let alpha = model.alpha();
        let points: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect();
        let check = contraction_check(
            |x, out| out.copy_from_slice(&model.field_standalone_f64(x)),
            |x, out| out.copy_from_slice(model.jacobian_f64(x).data()),
            |_| Ok(Tensor::eye(3)),
            alpha,
            &points,
            1e-4,
            1e-10,
        )
        .unwrap();
        assert!(check.pass, "boundary case must pass within 1e-10");
        for s in &check.samples {
            assert!(s.lambda_max.abs() <= 1e-10);
        }
    }

    #[test]
    fn non_positive_metric_is_a_reported_failure() {
        let a = Tensor::matrix(1, 1, vec![-1.0]);
        let m = Tensor::matrix(1, 1, vec![-1.0]);
        let check = contraction_check(
            linear_field(&a),
            linear_jacobian(&a),
            |_| Ok(m.clone()),
            0.1,
            &[vec![0.0]],
            1e-4,
            0.0,
        )
        .unwrap();
        assert!(!check.pass);
        assert!(check.samples[0].metric_min_eig < 0.0);
    }

    #[test]
    fn latent_metric_transports_to_data_space() {
        // Data field Ax is Hurwitz but not contracting in the identity
        // metric. Conjugate by P into latent coordinates, certify there with
        // the Lyapunov metric, and pull the certificate back as Pᵀ M̃ P.
        let a = Tensor::matrix(2, 2, vec![-1.0, 4.0, 0.0, -1.0]);
        let p = Tensor::matrix(2, 2, vec![2.0, 1.0, 1.0, 3.0]);
        let p_inv = {
            let det = 2.0 * 3.0 - 1.0 * 1.0;
            Tensor::matrix(2, 2, vec![3.0 / det, -1.0 / det, -1.0 / det, 2.0 / det])
        };
        let a_lat = p.matmul_value(&a.matmul_value(&p_inv));
        let m_lat = lyapunov_oracle(&a_lat, &Tensor::eye(2)).unwrap();

        // Identity metric genuinely fails on the data field at rate 0.05.
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let points: Vec<Vec<f64>> = (0..20)
            .map(|_| (0..2).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect();
        let naive = contraction_check(
            linear_field(&a),
            linear_jacobian(&a),
            |_| Ok(Tensor::eye(2)),
            0.05,
            &points,
            1e-4,
            1e-6,
        )
        .unwrap();
        assert!(!naive.pass, "A's symmetric part has a positive eigenvalue");

        // Latent certificate at a rate safely below the achievable one.
        let latent_points: Vec<Vec<f64>> =
            points.iter().map(|x| p.matvec_value(x)).collect();
        let latent = contraction_check(
            linear_field(&a_lat),
            linear_jacobian(&a_lat),
            |_| Ok(m_lat.clone()),
            0.05,
            &latent_points,
            1e-4,
            1e-6,
        )
        .unwrap();
        assert!(latent.pass, "latent λ_max {}", latent.samples[0].lambda_max);

        // Same rate, same (data) points, transported metric Dφᵀ M̃ Dφ.
        let m_data = p.transposed().matmul_value(&m_lat.matmul_value(&p));
        let transported = contraction_check(
            linear_field(&a),
            linear_jacobian(&a),
            |_| Ok(m_data.clone()),
            0.05,
            &points,
            1e-4,
            1e-6,
        )
        .unwrap();
        assert!(transported.pass, "transported certificate must carry over");
    }

    // ── Lyapunov oracle ─────────────────────────────────────────────────────

    #[test]
    fn lyapunov_of_minus_identity_is_half_identity() {
        let m = lyapunov_oracle(&Tensor::matrix(2, 2, vec![-1.0, 0.0, 0.0, -1.0]), &Tensor::eye(2))
            .unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let want = if i == j { 0.5 } else { 0.0 };
                assert!((m.get(i, j) - want).abs() <= 1e-14);
            }
        }
    }

    #[test]
    fn lyapunov_residual_vanishes_for_random_hurwitz_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for dim in [2usize, 4] {
            for _ in 0..5 {
                let a = Tensor::from_fn(&[dim, dim], |idx| {
                    let (i, j) = (idx / dim, idx % dim);
                    let s = rng.gen_range(-0.4..0.4);
                    if i == j {
                        s - 2.0
                    } else {
                        s
                    }
                });
                let c = Tensor::eye(dim);
                let m = lyapunov_oracle(&a, &c).unwrap();
                assert!(sym_min_eig(&m) > 0.0, "M must be positive definite");
                let mut res = m.matmul_value(&a);
                res.add_assign(&a.transposed().matmul_value(&m));
                res.add_assign(&c);
                assert!(frob(&res) <= 1e-10, "dim {dim}: residual {}", frob(&res));
            }
        }
    }

    #[test]
    fn non_hurwitz_matrices_are_rejected() {
        // Expanding: solvable Lyapunov system, but M is negative definite.
        let err = lyapunov_oracle(&Tensor::matrix(1, 1, vec![1.0]), &Tensor::eye(1)).unwrap_err();
        assert!(matches!(err, Error::NotHurwitz { .. }), "{err}");
        // Marginally stable rotation: λ_i + λ_j = 0 makes the system singular.
        let rot = Tensor::matrix(2, 2, vec![0.0, 1.0, -1.0, 0.0]);
        let err = lyapunov_oracle(&rot, &Tensor::eye(2)).unwrap_err();
        assert!(matches!(err, Error::NotHurwitz { .. }), "{err}");
    }

    #[test]
    fn report_renders_pass_and_fail_lines() {
        let mut report = VerifyReport::default();
        report.checks.push(CheckOutcome::new("decay-bound", 5e-4, 1e-3));
        report.checks.push(CheckOutcome::new("pde-residual", 0.5, 1e-2));
        report.achieved_rate = 0.04;
        report.bound_violations = vec![1e-4, 5e-4];
        report.residual_norms = vec![0.5];
        assert!(!report.pass());
        let text = report.to_string();
        assert!(text.contains("PASS decay-bound"));
        assert!(text.contains("FAIL pde-residual"));
        let csv = report.to_csv();
        assert!(csv.starts_with("check,value,tolerance,pass\n"));
        assert!(csv.contains("decay-bound,0.0005,0.001,true"));
    }
}
