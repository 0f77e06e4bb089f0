//! Deterministic nonlinear forward-backward-half-forward splitting with
//! momentum for `0 ∈ Ax + Bx + Cx`.
//!
//! One iteration reads
//!
//! ```text
//! y      = (M + A)⁻¹(M x − (B + C)x + u/γ)
//! x⁺     = y − γS⁻¹B(y) + γS⁻¹B(x)
//! u⁺     = (γM − S)y − (γM − S)x
//! ```
//!
//! With the scaled-metric kernel and `S = Id` this is FBHF; dropping `C`
//! gives Tseng's method, dropping `B` gives forward-backward. With the
//! shifted kernel it becomes a four-operator scheme.

use std::time::Instant;

use crate::diagnostics::{phi, RunReport, TraceRecord};
use crate::error::{check_dim, invalid, Result, SplitError};
use crate::kernels::{momentum_update_cached, warped_resolvent, KernelKind, KernelSpec};
use crate::metric::{Matrix, Metric, Vector};
use crate::operators::{SetValuedOp, SingleValuedOp};

/// Objective evaluated on the leading block of the stacked iterate.
#[derive(Debug, Clone)]
pub enum Objective {
    /// `½xᵀHx`.
    HalfQuadratic { h: Matrix },
    /// `½‖Gx − b‖²`.
    LeastSquares { g: Matrix, b: Vector },
}

impl Objective {
    pub fn eval(&self, z: &Vector) -> f64 {
        match self {
            Objective::HalfQuadratic { h } => {
                let x = z.rows(0, h.ncols());
                0.5 * x.dot(&(h * x))
            }
            Objective::LeastSquares { g, b } => 0.5 * (g * z.rows(0, g.ncols()) - b).norm_squared(),
        }
    }
}

/// The inclusion `0 ∈ Ax + Bx + Cx` together with its constants.
///
/// When `a2` is set, `a` holds `A₁` and the full set-valued part is
/// `A₁ + A₂`.
#[derive(Debug, Clone)]
pub struct SplitProblem {
    a: SetValuedOp,
    a2: Option<SingleValuedOp>,
    b: SingleValuedOp,
    c: SingleValuedOp,
    metric: Metric,
    mu: f64,
    beta: f64,
    known_solution: Option<Vector>,
    objective: Option<Objective>,
    initial_point: Option<Vector>,
    descriptor: String,
}

impl SplitProblem {
    /// Computes `μ = Lip_S(B)` and `β` from the operators. `C` must be of a
    /// kind with known cocoercivity.
    pub fn new(a: SetValuedOp, b: SingleValuedOp, c: SingleValuedOp, metric: Metric) -> Result<Self> {
        let dim = metric.dim();
        check_dim(dim, a.dim())?;
        check_dim(dim, b.dim())?;
        check_dim(dim, c.dim())?;
        let mu = b.lipschitz(&metric)?;
        let beta = c.cocoercivity(&metric)?.ok_or_else(|| invalid("C has no known cocoercivity constant"))?;
        Ok(SplitProblem {
            a,
            a2: None,
            b,
            c,
            metric,
            mu,
            beta,
            known_solution: None,
            objective: None,
            initial_point: None,
            descriptor: String::new(),
        })
    }

    /// Declares `A = A₁ + A₂` with `A₁` the current set-valued part.
    pub fn with_decomposition(mut self, a2: SingleValuedOp) -> Result<Self> {
        check_dim(self.dim(), a2.dim())?;
        self.a2 = Some(a2);
        Ok(self)
    }

    pub fn with_known_solution(mut self, x_star: Vector) -> Result<Self> {
        check_dim(self.dim(), x_star.len())?;
        self.known_solution = Some(x_star);
        Ok(self)
    }

    pub fn with_objective(mut self, objective: Objective) -> Self {
        self.objective = Some(objective);
        self
    }

    pub fn with_initial_point(mut self, x0: Vector) -> Result<Self> {
        check_dim(self.dim(), x0.len())?;
        self.initial_point = Some(x0);
        Ok(self)
    }

    pub fn with_descriptor(mut self, descriptor: impl Into<String>) -> Self {
        self.descriptor = descriptor.into();
        self
    }

    pub fn dim(&self) -> usize {
        self.metric.dim()
    }

    pub fn a(&self) -> &SetValuedOp {
        &self.a
    }

    pub fn a2(&self) -> Option<&SingleValuedOp> {
        self.a2.as_ref()
    }

    pub fn b(&self) -> &SingleValuedOp {
        &self.b
    }

    pub fn c(&self) -> &SingleValuedOp {
        &self.c
    }

    pub fn metric(&self) -> &Metric {
        &self.metric
    }

    /// Lipschitz constant of `B` in the metric.
    pub fn mu(&self) -> f64 {
        self.mu
    }

    /// Cocoercivity constant of `C`: `C` is `β⁻¹`-cocoercive.
    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn known_solution(&self) -> Option<&Vector> {
        self.known_solution.as_ref()
    }

    pub fn objective(&self) -> Option<&Objective> {
        self.objective.as_ref()
    }

    /// Starting point, zero unless set.
    pub fn initial_point(&self) -> Vector {
        self.initial_point.clone().unwrap_or_else(|| Vector::zeros(self.dim()))
    }

    pub fn descriptor(&self) -> &str {
        &self.descriptor
    }

    pub fn kernel(&self, kind: KernelKind) -> Result<KernelSpec> {
        match kind {
            KernelKind::ScaledMetric => Ok(KernelSpec::scaled_metric()),
            KernelKind::Shifted => KernelSpec::shifted(self.a2.as_ref(), &self.metric),
        }
    }
}

/// Iterate of the deterministic method.
#[derive(Debug, Clone, PartialEq)]
pub struct DetState {
    pub x: Vector,
    pub u: Vector,
    /// `‖y_{k−1} − x_{k−1}‖_S`, zero before the first step.
    pub prev_disp_norm: f64,
    pub iter: usize,
}

impl DetState {
    pub fn new(x0: Vector, u0: Vector) -> Result<Self> {
        check_dim(x0.len(), u0.len())?;
        Ok(DetState { x: x0, u: u0, prev_disp_norm: 0.0, iter: 0 })
    }

    /// Starts from `x0` with zero momentum.
    pub fn at(x0: Vector) -> Self {
        let u = Vector::zeros(x0.len());
        DetState { x: x0, u, prev_disp_norm: 0.0, iter: 0 }
    }
}

/// `1 − L_prev − L_cur − 2γL_curμ − γ²μ² − γβ/2`.
pub fn step_margin(gamma: f64, l_prev: f64, l_cur: f64, mu: f64, beta: f64) -> f64 {
    1.0 - l_prev - l_cur - 2.0 * gamma * l_cur * mu - gamma * gamma * mu * mu - gamma * beta / 2.0
}

/// Step-size condition for the deterministic method: `step_margin ≥ eps`.
pub fn validate_stepsize(gamma: f64, l_prev: f64, l_cur: f64, mu: f64, beta: f64, eps: f64) -> bool {
    step_margin(gamma, l_prev, l_cur, mu, beta) >= eps
}

/// `χ = 4/(β + √(β² + 16L²))`, the FBHF step-size bound.
pub fn fbhf_bound(beta: f64, l: f64) -> Result<f64> {
    if !(beta >= 0.0 && l >= 0.0) || beta + l <= 0.0 {
        return Err(invalid("FBHF step bound needs beta + L > 0"));
    }
    Ok(4.0 / (beta + (beta * beta + 16.0 * l * l).sqrt()))
}

/// `γ̄ = ((−β/2 + 2L) + √((β/2 + 2L)² + 12L²)) / (6L²)`.
pub fn fourop_bound(beta: f64, l: f64) -> Result<f64> {
    if !(beta >= 0.0) || !(l > 0.0) {
        return Err(invalid("four-operator step bound needs L > 0; use the FBHF bound when L = 0"));
    }
    let h = beta / 2.0;
    Ok(((-h + 2.0 * l) + ((h + 2.0 * l).powi(2) + 12.0 * l * l).sqrt()) / (6.0 * l * l))
}

/// Positive root of `1 − 2γa − 2γ²aμ − γ²μ² − γβ/2 = 0`, the largest
/// step meeting the step-size condition with zero margin when the kernel's
/// momentum constant is `γa`.
pub fn condition_root(a: f64, mu: f64, beta: f64) -> Result<f64> {
    if !(a >= 0.0 && mu >= 0.0 && beta >= 0.0) {
        return Err(invalid("condition root needs nonnegative constants"));
    }
    let quad = 2.0 * a * mu + mu * mu;
    let lin = 2.0 * a + beta / 2.0;
    if quad == 0.0 {
        if lin == 0.0 {
            return Err(invalid("step size is unbounded: all constants vanish"));
        }
        return Ok(1.0 / lin);
    }
    Ok((-lin + (lin * lin + 4.0 * quad).sqrt()) / (2.0 * quad))
}

/// `0.9·χ`.
pub fn default_gamma_fbhf(beta: f64, l: f64) -> Result<f64> {
    Ok(0.9 * fbhf_bound(beta, l)?)
}

/// `0.9·γ̄`.
pub fn default_gamma_fourop(beta: f64, l: f64) -> Result<f64> {
    Ok(0.9 * fourop_bound(beta, l)?)
}

/// Largest `γ` with `step_margin(γ, L(γ), L(γ), μ, β) ≥ eps`, where
/// `L(γ)` is the kernel's momentum constant. Found by bisection; the margin
/// is decreasing in `γ`.
pub fn auto_gamma(kernel: &KernelSpec, mu: f64, beta: f64, eps: f64) -> Result<f64> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(invalid("auto step-size margin must lie in (0, 1)"));
    }
    let margin = |g: f64| {
        let l = kernel.momentum_lipschitz(g);
        step_margin(g, l, l, mu, beta)
    };
    let mut hi = 1.0;
    while margin(hi) >= eps {
        hi *= 2.0;
        if hi > 1e12 {
            return Err(invalid("step size is unbounded: all constants vanish"));
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if margin(mid) >= eps {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if !(lo > 0.0) {
        return Err(invalid("no positive step size satisfies the margin"));
    }
    Ok(lo)
}

#[derive(Debug, Clone, PartialEq)]
pub enum StepSchedule {
    Constant(f64),
    /// `γ_k` for `k < len`, the last entry afterwards.
    Sequence(Vec<f64>),
}

/// How the step-size condition is treated during a solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Validation {
    /// Reject the solve if the condition fails with margin `epsilon`.
    Enforce,
    /// Checked once at construction (closed-form presets).
    Trusted,
    /// Run regardless and record the margin in the report.
    Report,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepPlan {
    pub schedule: StepSchedule,
    pub epsilon: f64,
    pub validation: Validation,
}

impl StepPlan {
    /// Constant step validated with the default margin `1e-3`.
    pub fn constant(gamma: f64) -> Self {
        StepPlan { schedule: StepSchedule::Constant(gamma), epsilon: 1e-3, validation: Validation::Enforce }
    }

    pub fn schedule(gammas: Vec<f64>, epsilon: f64) -> Result<Self> {
        if gammas.is_empty() {
            return Err(invalid("step schedule is empty"));
        }
        Ok(StepPlan { schedule: StepSchedule::Sequence(gammas), epsilon, validation: Validation::Enforce })
    }

    /// `scale·χ(β, μ)` for the scaled-metric kernel. Fails unless the step
    /// satisfies the condition with zero margin up to 1e-12.
    pub fn fbhf_preset(prob: &SplitProblem, scale: f64) -> Result<Self> {
        let gamma = scale * fbhf_bound(prob.beta(), prob.mu())?;
        let margin = step_margin(gamma, 0.0, 0.0, prob.mu(), prob.beta());
        if margin < -1e-12 {
            return Err(invalid(format!("step {gamma} violates the step-size condition (margin {margin:.3e})")));
        }
        Ok(StepPlan { schedule: StepSchedule::Constant(gamma), epsilon: 0.0, validation: Validation::Trusted })
    }

    /// `scale` times the largest step meeting the condition for the given
    /// kernel, for `scale ≤ 1`.
    pub fn shifted_preset(prob: &SplitProblem, kernel: &KernelSpec, scale: f64) -> Result<Self> {
        let a = kernel.momentum_lipschitz(1.0);
        let gamma = scale * condition_root(a, prob.mu(), prob.beta())?;
        let l = kernel.momentum_lipschitz(gamma);
        let margin = step_margin(gamma, l, l, prob.mu(), prob.beta());
        if margin < -1e-12 {
            return Err(invalid(format!("step {gamma} violates the step-size condition (margin {margin:.3e})")));
        }
        Ok(StepPlan { schedule: StepSchedule::Constant(gamma), epsilon: 0.0, validation: Validation::Trusted })
    }

    /// `scale·γ̄(β, L)` with `L` the Lipschitz constant of the undivided
    /// skew operator. This step is not guaranteed to meet the condition, so
    /// the plan only reports its margin.
    pub fn fourop_preset(beta: f64, l_full: f64, scale: f64) -> Result<Self> {
        let gamma = scale * fourop_bound(beta, l_full)?;
        Ok(StepPlan { schedule: StepSchedule::Constant(gamma), epsilon: 0.0, validation: Validation::Report })
    }

    /// Largest constant step meeting the condition with margin `eps`.
    pub fn auto(prob: &SplitProblem, kernel: &KernelSpec, eps: f64) -> Result<Self> {
        let gamma = auto_gamma(kernel, prob.mu(), prob.beta(), eps)?;
        Ok(StepPlan { schedule: StepSchedule::Constant(gamma), epsilon: eps, validation: Validation::Enforce })
    }

    pub fn gamma_at(&self, k: usize) -> f64 {
        match &self.schedule {
            StepSchedule::Constant(g) => *g,
            StepSchedule::Sequence(gs) => gs[k.min(gs.len() - 1)],
        }
    }

    fn is_constant(&self) -> bool {
        matches!(self.schedule, StepSchedule::Constant(_))
    }
}

/// Relative-change stopping test `‖z⁺ − z‖ / max(‖z‖, floor) < tol`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StoppingRule {
    pub tol: f64,
    pub floor: f64,
}

impl StoppingRule {
    pub fn new(tol: f64) -> Self {
        StoppingRule { tol, floor: 1.0 }
    }

    pub fn residual(&self, next: &Vector, cur: &Vector) -> f64 {
        crate::diagnostics::relative_change_with_floor(next, cur, self.floor)
    }
}

impl Default for StoppingRule {
    fn default() -> Self {
        StoppingRule::new(1e-6)
    }
}

#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub stop: StoppingRule,
    pub max_iter: usize,
    /// Record every n-th iteration plus the last one; 0 disables the trace.
    pub trace_every: usize,
    /// `u₀`, zero when absent.
    pub initial_momentum: Option<Vector>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { stop: StoppingRule::default(), max_iter: 5_000_000, trace_every: 0, initial_momentum: None }
    }
}

fn all_finite(v: &Vector) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// One iteration. Returns the next state and `y_k`.
pub fn det_step(state: &DetState, prob: &SplitProblem, kernel: &KernelSpec, gamma: f64) -> Result<(DetState, Vector)> {
    if !(gamma > 0.0) {
        return Err(invalid("step size must be positive"));
    }
    let s = prob.metric();
    let x = &state.x;
    let bx = prob.b().eval(x)?;
    let cx = prob.c().eval(x)?;
    let (mx, a2x) = kernel.apply_cached(gamma, s, x)?;
    let rhs = mx - &bx - cx + &state.u / gamma;
    let y = warped_resolvent(kernel, prob.a(), gamma, s, &rhs)?;
    let by = prob.b().eval(&y)?;
    let x_next = &y - s.solve(&(by - bx))? * gamma;
    let u_next = momentum_update_cached(kernel, gamma, &y, a2x.as_ref())?;
    if !(all_finite(&y) && all_finite(&x_next) && all_finite(&u_next)) {
        return Err(SplitError::Divergence { iter: state.iter, trace: Vec::new() });
    }
    let prev_disp_norm = s.norm(&(&y - x))?;
    Ok((DetState { x: x_next, u: u_next, prev_disp_norm, iter: state.iter + 1 }, y))
}

fn kernel_label(kernel: &KernelSpec) -> &'static str {
    match kernel.kind() {
        KernelKind::ScaledMetric => "nfbhf",
        KernelKind::Shifted => "nfbhf-shifted",
    }
}

/// Iterates [`det_step`] until the stopping rule fires or `max_iter` steps
/// have run.
pub fn det_solve(prob: &SplitProblem, kernel: &KernelSpec, plan: &StepPlan, opts: &SolveOptions) -> Result<RunReport> {
    let start = Instant::now();
    let dim = prob.dim();
    let u0 = opts.initial_momentum.clone().unwrap_or_else(|| Vector::zeros(dim));
    let mut state = DetState::new(prob.initial_point(), u0)?;
    check_dim(dim, state.x.len())?;

    let (mu, beta) = (prob.mu(), prob.beta());
    let gamma0 = plan.gamma_at(0);
    if !(gamma0 > 0.0) {
        return Err(invalid("step size must be positive"));
    }
    let mut l_prev = kernel.momentum_lipschitz(gamma0);
    let margin0 = step_margin(gamma0, l_prev, l_prev, mu, beta);
    if plan.validation == Validation::Enforce && margin0 < plan.epsilon {
        return Err(invalid(format!(
            "step {gamma0} fails the step-size condition: margin {margin0:.3e} < {}",
            plan.epsilon
        )));
    }
    let mut min_margin = margin0;

    let mut trace = Vec::new();
    let mut residual = None;
    let mut converged = false;
    for k in 0..opts.max_iter {
        let gamma = plan.gamma_at(k);
        let l_cur = kernel.momentum_lipschitz(gamma);
        if !plan.is_constant() {
            let m = step_margin(gamma, l_prev, l_cur, mu, beta);
            if plan.validation == Validation::Enforce && (!(gamma > 0.0) || m < plan.epsilon) {
                return Err(invalid(format!("step {gamma} at iteration {k} fails the step-size condition")));
            }
            min_margin = min_margin.min(m);
        }
        let (next, _) = det_step(&state, prob, kernel, gamma).map_err(|e| match e {
            SplitError::Divergence { iter, .. } => SplitError::Divergence { iter, trace: trace.clone() },
            other => other,
        })?;
        let r = opts.stop.residual(&next.x, &state.x);
        residual = Some(r);
        converged = r < opts.stop.tol;
        let last = converged || k + 1 == opts.max_iter;
        if opts.trace_every > 0 && ((k + 1) % opts.trace_every == 0 || last) {
            trace.push(trace_record(prob, &next, l_cur, r, start)?);
        }
        l_prev = l_cur;
        state = next;
        if converged {
            break;
        }
    }

    let x_star = prob.known_solution();
    let final_error = match x_star {
        Some(xs) => Some(prob.metric().norm(&(&state.x - xs))?),
        None => None,
    };
    Ok(RunReport {
        algo: kernel_label(kernel).to_string(),
        problem: prob.descriptor().to_string(),
        seed: None,
        gamma: gamma0,
        step_margin: min_margin,
        iterations: state.iter,
        converged,
        wall_seconds: start.elapsed().as_secs_f64(),
        final_residual: residual,
        final_objective: prob.objective().map(|o| o.eval(&state.x)),
        final_error,
        component_evals: None,
        snapshot_refreshes: None,
        trace,
        solution: state.x.iter().copied().collect(),
    })
}

fn trace_record(
    prob: &SplitProblem,
    state: &DetState,
    l_prev: f64,
    residual: f64,
    start: Instant,
) -> Result<TraceRecord> {
    let (lyapunov, error) = match prob.known_solution() {
        Some(xs) => (
            Some(phi(&state.x, &state.u, state.prev_disp_norm, l_prev, xs, prob.metric())?),
            Some(prob.metric().norm(&(&state.x - xs))?),
        ),
        None => (None, None),
    };
    Ok(TraceRecord {
        iter: state.iter,
        residual,
        lyapunov,
        error,
        objective: prob.objective().map(|o| o.eval(&state.x)),
        time_s: start.elapsed().as_secs_f64(),
    })
}
