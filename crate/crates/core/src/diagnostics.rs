//! Runtime-checkable convergence quantities.
//!
//! The Lyapunov evaluators reproduce the energies whose monotone decrease
//! drives the convergence theory of both solvers. The rate factors are
//! certificates: the solvers never read them, tests compare empirical decay
//! against them.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Result};
use crate::metric::{Metric, Vector};

/// CSV header matching [`TraceRecord::csv_row`].
pub const TRACE_CSV_HEADER: &str = "iter,residual,objective,error,phi,time_s";

/// One sampled iteration of a solver run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iter: usize,
    pub residual: f64,
    /// `Φ_k(x*)` or `Γ_k(x*)` when a reference solution is known.
    pub lyapunov: Option<f64>,
    /// `‖x_k − x*‖_S` when a reference solution is known.
    pub error: Option<f64>,
    pub objective: Option<f64>,
    pub time_s: f64,
}

impl TraceRecord {
    pub fn csv_row(&self) -> String {
        fn opt(v: Option<f64>) -> String {
            v.map(|x| x.to_string()).unwrap_or_default()
        }
        format!(
            "{},{},{},{},{},{}",
            self.iter,
            self.residual,
            opt(self.objective),
            opt(self.error),
            opt(self.lyapunov),
            self.time_s
        )
    }
}

/// Outcome of one solver run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub algo: String,
    pub problem: String,
    pub seed: Option<u64>,
    pub gamma: f64,
    /// Smallest step-size condition margin at the configured parameters.
    pub step_margin: f64,
    pub iterations: usize,
    pub converged: bool,
    pub wall_seconds: f64,
    /// Last relative change; `None` when no iteration ran.
    pub final_residual: Option<f64>,
    pub final_objective: Option<f64>,
    pub final_error: Option<f64>,
    /// Evaluations of individual finite-sum components of `B`.
    pub component_evals: Option<u64>,
    pub snapshot_refreshes: Option<u64>,
    pub trace: Vec<TraceRecord>,
    pub solution: Vec<f64>,
}

impl RunReport {
    /// Trace as CSV text including the header line.
    pub fn trace_csv(&self) -> String {
        let mut out = String::from(TRACE_CSV_HEADER);
        out.push('\n');
        for r in &self.trace {
            out.push_str(&r.csv_row());
            out.push('\n');
        }
        out
    }
}

/// `Φ_k(x*) = ‖x_k − x*‖²_S + 2⟨u_k, x_k − x*⟩ + L_{k−1}‖y_{k−1} − x_{k−1}‖²_S`.
pub fn phi(x: &Vector, u: &Vector, prev_disp_norm: f64, l_prev: f64, x_star: &Vector, metric: &Metric) -> Result<f64> {
    check_dim(x.len(), u.len())?;
    check_dim(x.len(), x_star.len())?;
    let e = x - x_star;
    Ok(metric.norm_sq(&e)? + 2.0 * u.dot(&e) + l_prev * prev_disp_norm * prev_disp_norm)
}

/// `Γ_k(x*) = λ‖x_k − x*‖²_S + ((1−λ)/p)‖ω_k − x*‖²_S + 2⟨u_k, x_k − x*⟩
///  + L_{k−1}‖y_{k−1} − x̄_{k−1}‖²_S`.
#[allow(clippy::too_many_arguments)]
pub fn gamma_lyap(
    x: &Vector,
    omega: &Vector,
    u: &Vector,
    prev_disp_norm: f64,
    l_prev: f64,
    lambda: f64,
    p: f64,
    x_star: &Vector,
    metric: &Metric,
) -> Result<f64> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(invalid("snapshot probability must lie in (0, 1]"));
    }
    check_dim(x.len(), omega.len())?;
    check_dim(x.len(), u.len())?;
    check_dim(x.len(), x_star.len())?;
    let e = x - x_star;
    let w = omega - x_star;
    Ok(lambda * metric.norm_sq(&e)?
        + (1.0 - lambda) / p * metric.norm_sq(&w)?
        + 2.0 * u.dot(&e)
        + l_prev * prev_disp_norm * prev_disp_norm)
}

/// `‖z_next − z_cur‖ / max(‖z_cur‖, 1e-300)`.
pub fn relative_change(z_next: &Vector, z_cur: &Vector) -> f64 {
    relative_change_with_floor(z_next, z_cur, 1e-300)
}

/// `‖z_next − z_cur‖ / max(‖z_cur‖, floor)`.
pub fn relative_change_with_floor(z_next: &Vector, z_cur: &Vector, floor: f64) -> f64 {
    (z_next - z_cur).norm() / z_cur.norm().max(floor)
}

/// Linear-rate factor `t` for the deterministic method under a
/// `ρ`-strongly monotone `A`:
/// `‖x_k − x*‖²_S ≤ Φ₁ / ((1 − L)(1 + t)^{k−1})`.
///
/// Returns 0 (no certificate) when `κ + ν < 0`, since the descent term the
/// bound relies on is then not available.
#[allow(clippy::too_many_arguments)]
pub fn det_rate_factor(
    gamma: f64,
    rho: f64,
    mu: f64,
    beta: f64,
    l_prev: f64,
    l_cur: f64,
    eps1: f64,
    eps2: f64,
) -> Result<f64> {
    if !(eps1 > 0.0 && eps2 > 0.0 && gamma > 0.0) {
        return Err(invalid("det_rate_factor needs positive gamma, eps1, eps2"));
    }
    if gamma >= 1.0 / eps1 {
        return Err(invalid(format!("gamma = {gamma} must be below 1/eps1 = {}", 1.0 / eps1)));
    }
    let kappa = 1.0 - l_prev - l_cur - 2.0 * gamma * l_cur * mu - gamma * gamma * mu * mu - gamma * beta / 2.0;
    let nu = 2.0 * gamma * gamma * rho * mu * mu * (gamma - 1.0 / eps1);
    if kappa + nu < 0.0 {
        return Ok(0.0);
    }
    let first = 2.0 * gamma * rho * (1.0 - gamma * eps1) / (1.0 + l_cur / eps2);
    let second = if l_cur == 0.0 { f64::INFINITY } else { (kappa + nu) / (l_cur * (eps2 + 1.0)) };
    Ok(first.min(second).max(0.0))
}

/// Largest [`det_rate_factor`] over a grid of `ε₁ ∈ (0, 1/γ)` and `ε₂`,
/// together with the maximizing pair.
#[allow(clippy::too_many_arguments)]
pub fn best_det_rate_factor(
    gamma: f64,
    rho: f64,
    mu: f64,
    beta: f64,
    l_prev: f64,
    l_cur: f64,
) -> Result<(f64, f64, f64)> {
    if !(gamma > 0.0) {
        return Err(invalid("best_det_rate_factor needs a positive gamma"));
    }
    let mut best = (0.0, 0.5 / gamma, 1.0);
    for i in 1..200 {
        let eps1 = i as f64 / (200.0 * gamma);
        for eps2 in [0.01, 0.1, 0.5, 1.0, 2.0, 10.0, 100.0] {
            let t = det_rate_factor(gamma, rho, mu, beta, l_prev, l_cur, eps1, eps2)?;
            if t > best.0 {
                best = (t, eps1, eps2);
            }
        }
    }
    Ok(best)
}

/// Linear-rate factor `c` for the variance-reduced method with `λ = 1 − p`;
/// the expected energy contracts by `1 + c/(2·rate_l)` per iteration.
///
/// `mu` is the strong-monotonicity modulus of the full operator `B`.
#[allow(clippy::too_many_arguments)]
pub fn stoch_rate_factor(
    p: f64,
    gamma: f64,
    mu: f64,
    l_prev: f64,
    l_cur: f64,
    alpha: f64,
    eps3: f64,
    rate_l: f64,
) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(invalid("stoch_rate_factor needs p in (0, 1)"));
    }
    if !(eps3 > 0.0) || !(gamma > 0.0) || l_cur < 0.0 || alpha < 0.0 {
        return Err(invalid("stoch_rate_factor needs gamma, eps3 > 0 and L, alpha >= 0"));
    }
    if rate_l < (3.0 - p) / 2.0 {
        return Err(invalid(format!("rate_l = {rate_l} must be at least (3 - p)/2 = {}", (3.0 - p) / 2.0)));
    }
    let bound = (1.0 - p.sqrt()) / 4.0;
    if l_cur + alpha > bound {
        return Err(invalid(format!("L + alpha = {} exceeds (1 - sqrt(p))/4 = {bound}", l_cur + alpha)));
    }
    let first = gamma * mu / (1.0 + l_cur / (2.0 * rate_l * eps3));
    let second = if l_cur == 0.0 {
        f64::INFINITY
    } else {
        2.0 * rate_l * (1.0 - p - l_prev - alpha - (1.0 - p) * (alpha + l_cur)) / ((1.0 - p) * l_cur * (eps3 + 1.0))
    };
    let third = rate_l * p * (1.0 - p.sqrt() - 4.0 * (l_cur + alpha))
        / (2.0 * (1.0 - p) * (4.0 + p) + 2.0 * p * l_cur * (eps3 + 1.0));
    Ok(first.min(second).min(third).max(0.0))
}

/// Least-squares geometric rate of an error trace: `exp(slope)` of
/// `log(error_k)` against `k`. Entries below 1e-14 are dropped as
/// floating-point floor. Returns 0 when every entry is at the floor.
/// Values above 1 indicate growth.
pub fn fit_geometric_rate(trace: &[f64]) -> Result<f64> {
    if trace.len() < 10 {
        return Err(invalid("geometric fit needs at least 10 entries"));
    }
    let points: Vec<(f64, f64)> = trace
        .iter()
        .enumerate()
        .filter(|(_, e)| **e > 1e-14 && e.is_finite())
        .map(|(k, e)| (k as f64, e.ln()))
        .collect();
    if points.is_empty() {
        return Ok(0.0);
    }
    if points.len() == 1 {
        return Ok(0.0);
    }
    let n = points.len() as f64;
    let mean_k = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_l = points.iter().map(|p| p.1).sum::<f64>() / n;
    let cov: f64 = points.iter().map(|(k, l)| (k - mean_k) * (l - mean_l)).sum();
    let var: f64 = points.iter().map(|(k, _)| (k - mean_k).powi(2)).sum();
    Ok((cov / var).exp())
}
