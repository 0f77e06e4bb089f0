//! Loopless variance-reduced forward-backward-half-forward splitting with
//! momentum for `0 ∈ Ax + ΣBᵢx + Cx`.
//!
//! ```text
//! x̄   = λx + (1 − λ)ω
//! y    = (M + A)⁻¹(M x̄ − (B + C)ω + u/γ)
//! u⁺   = (γM − S)y − (γM − S)x̄
//! x⁺   = y − γS⁻¹B_ξ(y) + γS⁻¹B_ξ(ω),      ξ ~ Q
//! ω⁺   = x⁺ with probability p, else ω
//! ```
//!
//! `B_ξ = B_i / P(i)` is an unbiased estimate of `B`. The snapshot keeps
//! `B_i(ω)` for every component and `C(ω)`; it is rebuilt lazily at the start
//! of the step after `ω` moves.

use std::time::Instant;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diagnostics::{gamma_lyap, RunReport, TraceRecord};
use crate::error::{check_dim, invalid, Result, SplitError};
use crate::kernels::{momentum_update_cached, warped_resolvent, KernelSpec};
use crate::metric::{Metric, Vector};
use crate::operators::SingleValuedOp;
use crate::solver_det::{SolveOptions, SplitProblem, Validation};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplingScheme {
    /// `P(i) = 1/N`.
    Uniform,
    /// `P(i) = Lᵢ / ΣLⱼ`.
    Importance,
}

/// `B = ΣBᵢ` with a sampling distribution over the components.
#[derive(Debug, Clone)]
pub struct FiniteSumOracle {
    components: Vec<SingleValuedOp>,
    constants: Vec<f64>,
    scheme: SamplingScheme,
    probs: Vec<f64>,
    theta: f64,
    sampler: Option<WeightedIndex<f64>>,
}

impl FiniteSumOracle {
    /// Lipschitz constants are computed in the metric.
    pub fn new(components: Vec<SingleValuedOp>, metric: &Metric, scheme: SamplingScheme) -> Result<Self> {
        let constants = components.iter().map(|c| c.lipschitz(metric)).collect::<Result<Vec<_>>>()?;
        Self::with_constants(components, constants, scheme)
    }

    pub fn with_constants(
        components: Vec<SingleValuedOp>,
        constants: Vec<f64>,
        scheme: SamplingScheme,
    ) -> Result<Self> {
        if components.is_empty() {
            return Err(invalid("finite sum needs at least one component"));
        }
        check_dim(components.len(), constants.len())?;
        let dim = components[0].dim();
        for c in &components {
            check_dim(dim, c.dim())?;
        }
        if constants.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
            return Err(invalid("component Lipschitz constants must be positive and finite"));
        }
        let n = components.len() as f64;
        let total: f64 = constants.iter().sum();
        let (probs, theta, sampler) = match scheme {
            SamplingScheme::Uniform => {
                let sq: f64 = constants.iter().map(|l| l * l).sum();
                (vec![1.0 / n; components.len()], (n * sq).sqrt(), None)
            }
            SamplingScheme::Importance => {
                let probs: Vec<f64> = constants.iter().map(|l| l / total).collect();
                let sampler = WeightedIndex::new(&constants).map_err(|e| invalid(e.to_string()))?;
                (probs, total, Some(sampler))
            }
        };
        Ok(FiniteSumOracle { components, constants, scheme, probs, theta, sampler })
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    pub fn components(&self) -> &[SingleValuedOp] {
        &self.components
    }

    pub fn constants(&self) -> &[f64] {
        &self.constants
    }

    pub fn scheme(&self) -> SamplingScheme {
        self.scheme
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probs
    }

    /// Lipschitz-in-mean constant of the estimator.
    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// `B_i(x) / P(i)` for a zero-based index `i`.
    pub fn oracle_apply(&self, i: usize, x: &Vector) -> Result<Vector> {
        let comp =
            self.components.get(i).ok_or(SplitError::IndexOutOfRange { index: i, len: self.components.len() })?;
        Ok(comp.eval(x)? / self.probs[i])
    }

    /// `Σ P(i)·B_ξ(x)`, the expectation of the estimator.
    pub fn oracle_mean(&self, x: &Vector) -> Result<Vector> {
        let mut out = Vector::zeros(self.dim());
        for i in 0..self.len() {
            out += self.oracle_apply(i, x)? * self.probs[i];
        }
        Ok(out)
    }

    /// `ΣB_i(x)`.
    pub fn full_eval(&self, x: &Vector) -> Result<Vector> {
        let mut out = Vector::zeros(self.dim());
        for c in &self.components {
            out += c.eval(x)?;
        }
        Ok(out)
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        match &self.sampler {
            Some(w) => w.sample(rng),
            None => rng.random_range(0..self.components.len()),
        }
    }
}

/// The two step-size margins of the variance-reduced method:
/// `λ − L_prev − γL_curθ − λ(γL_curθ + L_cur)` and
/// `1 − λ − γ²θ² − γβ/2 − (1 − λ)(γL_curθ + L_cur)`.
pub fn stoch_margins(lambda: f64, gamma: f64, theta: f64, beta: f64, l_prev: f64, l_cur: f64) -> (f64, f64) {
    let drift = gamma * l_cur * theta + l_cur;
    let first = lambda - l_prev - gamma * l_cur * theta - lambda * drift;
    let second = 1.0 - lambda - gamma * gamma * theta * theta - gamma * beta / 2.0 - (1.0 - lambda) * drift;
    (first, second)
}

/// Both margins of [`stoch_margins`] are at least `eps`.
pub fn validate_stoch(lambda: f64, gamma: f64, theta: f64, beta: f64, l_prev: f64, l_cur: f64, eps: f64) -> bool {
    let (a, b) = stoch_margins(lambda, gamma, theta, beta, l_prev, l_cur);
    a >= eps && b >= eps
}

/// `λ = 1 − p` and `γ = min{√p/(2θ), p/β, α/(L_cur·θ)}` for the linear-rate
/// regime under a strongly monotone `B`. Terms with a zero denominator are
/// dropped.
pub fn strong_preset(p: f64, beta: f64, theta: f64, l_cur: f64, alpha: f64) -> Result<(f64, f64)> {
    if !(p > 0.0 && p < 1.0) {
        return Err(invalid("snapshot probability must lie in (0, 1)"));
    }
    if !(theta > 0.0) || beta < 0.0 || l_cur < 0.0 || alpha < 0.0 {
        return Err(invalid("preset needs theta > 0 and beta, L, alpha >= 0"));
    }
    let bound = (1.0 - p.sqrt()) / 4.0;
    if l_cur + alpha > bound {
        return Err(invalid(format!("L + alpha = {} exceeds (1 - sqrt(p))/4 = {bound}", l_cur + alpha)));
    }
    let ratio = |num: f64, den: f64| if den == 0.0 { f64::INFINITY } else { num / den };
    let gamma = (p.sqrt() / (2.0 * theta)).min(ratio(p, beta)).min(ratio(alpha, l_cur * theta));
    Ok((1.0 - p, gamma))
}

#[derive(Debug, Clone, PartialEq)]
pub struct StochConfig {
    pub p: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub seed: u64,
    pub epsilon: f64,
    pub validation: Validation,
}

impl StochConfig {
    pub fn new(p: f64, lambda: f64, gamma: f64, seed: u64) -> Self {
        StochConfig { p, lambda, gamma, seed, epsilon: 1e-3, validation: Validation::Enforce }
    }

    fn check(&self) -> Result<()> {
        if !(self.p > 0.0 && self.p <= 1.0) {
            return Err(invalid("snapshot probability must lie in (0, 1]"));
        }
        if !(self.gamma > 0.0) || !(self.lambda >= 0.0) {
            return Err(invalid("step size must be positive and lambda nonnegative"));
        }
        Ok(())
    }
}

/// Component values at the snapshot point.
#[derive(Debug, Clone, PartialEq)]
struct Snapshot {
    parts: Vec<Vector>,
    b_full: Vector,
    c: Vector,
}

#[derive(Debug, Clone)]
pub struct StochState {
    pub x: Vector,
    pub omega: Vector,
    pub u: Vector,
    /// `‖y_{k−1} − x̄_{k−1}‖_S`, zero before the first step.
    pub prev_disp_norm: f64,
    pub iter: usize,
    index_rng: ChaCha8Rng,
    coin_rng: ChaCha8Rng,
    snapshot: Option<Snapshot>,
    component_evals: u64,
    snapshot_refreshes: u64,
}

impl StochState {
    /// `ω₀ = x₀`. Index sampling and the snapshot coin draw from separate
    /// streams of the seed.
    pub fn new(x0: Vector, u0: Vector, seed: u64) -> Result<Self> {
        check_dim(x0.len(), u0.len())?;
        let mut index_rng = ChaCha8Rng::seed_from_u64(seed);
        index_rng.set_stream(0);
        let mut coin_rng = ChaCha8Rng::seed_from_u64(seed);
        coin_rng.set_stream(1);
        Ok(StochState {
            omega: x0.clone(),
            x: x0,
            u: u0,
            prev_disp_norm: 0.0,
            iter: 0,
            index_rng,
            coin_rng,
            snapshot: None,
            component_evals: 0,
            snapshot_refreshes: 0,
        })
    }

    /// Component evaluations of `B` so far.
    pub fn component_evals(&self) -> u64 {
        self.component_evals
    }

    /// Times `ω` moved.
    pub fn snapshot_refreshes(&self) -> u64 {
        self.snapshot_refreshes
    }

    /// Iterates and counters only; the two rng streams are excluded.
    pub fn same_iterates(&self, other: &StochState) -> bool {
        self.x == other.x && self.omega == other.omega && self.u == other.u && self.iter == other.iter
    }

    fn ensure_snapshot(&mut self, prob: &SplitProblem, oracle: &FiniteSumOracle) -> Result<()> {
        if self.snapshot.is_none() {
            let parts = oracle.components().iter().map(|c| c.eval(&self.omega)).collect::<Result<Vec<_>>>()?;
            let mut b_full = Vector::zeros(self.omega.len());
            for p in &parts {
                b_full += p;
            }
            let c = prob.c().eval(&self.omega)?;
            self.component_evals += parts.len() as u64;
            self.snapshot = Some(Snapshot { parts, b_full, c });
        }
        Ok(())
    }
}

/// Intermediate points of one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepDetail {
    pub x_bar: Vector,
    pub y: Vector,
}

fn all_finite(v: &Vector) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// One step with the sampled index `xi` and snapshot decision `refresh`
/// supplied by the caller. The rng streams are left untouched.
pub fn stoch_step_with(
    state: &StochState,
    prob: &SplitProblem,
    oracle: &FiniteSumOracle,
    kernel: &KernelSpec,
    cfg: &StochConfig,
    xi: usize,
    refresh: bool,
) -> Result<(StochState, StepDetail)> {
    let mut next = state.clone();
    let detail = advance(&mut next, prob, oracle, kernel, cfg, xi, refresh)?;
    Ok((next, detail))
}

/// One step drawing `ξ` and then the snapshot coin from the state's streams.
pub fn stoch_step(
    state: &StochState,
    prob: &SplitProblem,
    oracle: &FiniteSumOracle,
    kernel: &KernelSpec,
    cfg: &StochConfig,
) -> Result<(StochState, StepDetail)> {
    let mut next = state.clone();
    let detail = advance_sampled(&mut next, prob, oracle, kernel, cfg)?;
    Ok((next, detail))
}

fn advance_sampled(
    state: &mut StochState,
    prob: &SplitProblem,
    oracle: &FiniteSumOracle,
    kernel: &KernelSpec,
    cfg: &StochConfig,
) -> Result<StepDetail> {
    let xi = oracle.sample(&mut state.index_rng);
    let refresh = state.coin_rng.random::<f64>() < cfg.p;
    advance(state, prob, oracle, kernel, cfg, xi, refresh)
}

fn advance(
    state: &mut StochState,
    prob: &SplitProblem,
    oracle: &FiniteSumOracle,
    kernel: &KernelSpec,
    cfg: &StochConfig,
    xi: usize,
    refresh: bool,
) -> Result<StepDetail> {
    if xi >= oracle.len() {
        return Err(SplitError::IndexOutOfRange { index: xi, len: oracle.len() });
    }
    check_dim(prob.dim(), oracle.dim())?;
    check_dim(prob.dim(), state.x.len())?;
    state.ensure_snapshot(prob, oracle)?;
    let snap = state.snapshot.as_ref().expect("snapshot was just ensured");
    let (gamma, lambda) = (cfg.gamma, cfg.lambda);
    let s = prob.metric();

    let x_bar = &state.omega + (&state.x - &state.omega) * lambda;
    let (mx, a2x) = kernel.apply_cached(gamma, s, &x_bar)?;
    let rhs = mx - &snap.b_full - &snap.c + &state.u / gamma;
    let y = warped_resolvent(kernel, prob.a(), gamma, s, &rhs)?;
    let u_next = momentum_update_cached(kernel, gamma, &y, a2x.as_ref())?;

    let p_xi = oracle.probabilities()[xi];
    let by = oracle.components()[xi].eval(&y)? / p_xi;
    let bw = &snap.parts[xi] / p_xi;
    let x_next = &y - s.solve(&(by - bw))? * gamma;
    state.component_evals += 1;

    if !(all_finite(&y) && all_finite(&x_next) && all_finite(&u_next)) {
        return Err(SplitError::Divergence { iter: state.iter, trace: Vec::new() });
    }
    state.prev_disp_norm = s.norm(&(&y - &x_bar))?;
    state.u = u_next;
    if refresh {
        state.omega = x_next.clone();
        state.snapshot = None;
        state.snapshot_refreshes += 1;
    }
    state.x = x_next;
    state.iter += 1;
    Ok(StepDetail { x_bar, y })
}

/// Runs [`stoch_step`] until the relative change of `x` falls below the
/// tolerance or `max_iter` steps have run.
pub fn stoch_solve(
    prob: &SplitProblem,
    oracle: &FiniteSumOracle,
    kernel: &KernelSpec,
    cfg: &StochConfig,
    opts: &SolveOptions,
) -> Result<RunReport> {
    let start = Instant::now();
    cfg.check()?;
    let dim = prob.dim();
    check_dim(dim, oracle.dim())?;
    let l = kernel.momentum_lipschitz(cfg.gamma);
    let (m1, m2) = stoch_margins(cfg.lambda, cfg.gamma, oracle.theta(), prob.beta(), l, l);
    if cfg.validation == Validation::Enforce && (m1 < cfg.epsilon || m2 < cfg.epsilon) {
        return Err(invalid(format!(
            "parameters fail the step-size condition: margins {m1:.3e}, {m2:.3e} < {}",
            cfg.epsilon
        )));
    }
    let u0 = opts.initial_momentum.clone().unwrap_or_else(|| Vector::zeros(dim));
    let mut state = StochState::new(prob.initial_point(), u0, cfg.seed)?;

    let mut trace = Vec::new();
    let mut residual = None;
    let mut converged = false;
    for k in 0..opts.max_iter {
        let x_prev = state.x.clone();
        advance_sampled(&mut state, prob, oracle, kernel, cfg).map_err(|e| match e {
            SplitError::Divergence { iter, .. } => SplitError::Divergence { iter, trace: trace.clone() },
            other => other,
        })?;
        let r = opts.stop.residual(&state.x, &x_prev);
        residual = Some(r);
        converged = r < opts.stop.tol;
        let last = converged || k + 1 == opts.max_iter;
        if opts.trace_every > 0 && ((k + 1) % opts.trace_every == 0 || last) {
            trace.push(trace_record(prob, cfg, &state, l, r, start)?);
        }
        if converged {
            break;
        }
    }

    let final_error = match prob.known_solution() {
        Some(xs) => Some(prob.metric().norm(&(&state.x - xs))?),
        None => None,
    };
    Ok(RunReport {
        algo: "svr".to_string(),
        problem: prob.descriptor().to_string(),
        seed: Some(cfg.seed),
        gamma: cfg.gamma,
        step_margin: m1.min(m2),
        iterations: state.iter,
        converged,
        wall_seconds: start.elapsed().as_secs_f64(),
        final_residual: residual,
        final_objective: prob.objective().map(|o| o.eval(&state.x)),
        final_error,
        component_evals: Some(state.component_evals),
        snapshot_refreshes: Some(state.snapshot_refreshes),
        trace,
        solution: state.x.iter().copied().collect(),
    })
}

fn trace_record(
    prob: &SplitProblem,
    cfg: &StochConfig,
    state: &StochState,
    l_prev: f64,
    residual: f64,
    start: Instant,
) -> Result<TraceRecord> {
    let (lyapunov, error) = match prob.known_solution() {
        Some(xs) => (
            Some(gamma_lyap(
                &state.x,
                &state.omega,
                &state.u,
                state.prev_disp_norm,
                l_prev,
                cfg.lambda,
                cfg.p,
                xs,
                prob.metric(),
            )?),
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
