//! Benchmark CLI: seeded experiment runners with CSV traces and a JSON
//! summary per invocation.
//!
//! Exit codes: 0 success, 1 solver divergence, 2 usage or configuration
//! error, 3 data parse error.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diagnostics::{best_det_rate_factor, fit_geometric_rate, stoch_rate_factor, RunReport};
use crate::error::SplitError;
use crate::kernels::{KernelKind, KernelSpec};
use crate::metric::Vector;
use crate::operators::SingleValuedOp;
use crate::problems::{
    build_finite_sum_synthetic, build_portfolio, build_qp_saddle, build_strong_synthetic, four_operator_form,
    parse_orlibrary, split_b_finite_sum, PortfolioInstance,
};
use crate::solver_det::{det_solve, SolveOptions, SplitProblem, StepPlan, StoppingRule, Validation};
use crate::solver_stoch::{stoch_solve, strong_preset, FiniteSumOracle, SamplingScheme, StochConfig};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Solver(#[from] SplitError),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Solver(SplitError::Divergence { .. }) => 1,
            HarnessError::Solver(SplitError::Parse { .. }) => 3,
            _ => 2,
        }
    }
}

pub type HarnessResult<T> = std::result::Result<T, HarnessError>;

fn usage(msg: impl Into<String>) -> HarnessError {
    HarnessError::Usage(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algo {
    /// Forward-backward; requires B = 0.
    Fb,
    Fbhf,
    /// Tseng's method on B + C.
    Tseng,
    /// Shifted kernel on the split skew operator.
    #[value(name = "nfbhf-fourop", alias = "fourop")]
    NfbhfFourop,
    /// Loopless variance-reduced method.
    Svr,
}

impl Algo {
    pub fn label(self) -> &'static str {
        match self {
            Algo::Fb => "fb",
            Algo::Fbhf => "fbhf",
            Algo::Tseng => "tseng",
            Algo::NfbhfFourop => "nfbhf-fourop",
            Algo::Svr => "svr",
        }
    }
}

impl fmt::Display for Algo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Step size used for the four-operator scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FouropStep {
    /// Scaled root of the step-size condition.
    Root,
    /// Scaled closed-form bound in terms of β and Lip(B); only the margin is
    /// reported.
    Printed,
}

#[derive(Debug, Parser)]
#[command(name = "splitkit", version, about = "Splitting benchmarks for structured monotone inclusions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Constrained least squares as a saddle problem over random instances.
    QpBench(QpArgs),
    /// Mean-variance portfolio with group floors from an OR-Library file.
    Portfolio(PortfolioArgs),
    /// Strongly monotone synthetic with a known solution; compares the
    /// fitted rate with the certificate.
    Synthetic(SyntheticArgs),
    /// Component-evaluation counts of the full-batch and variance-reduced
    /// methods on one finite-sum instance.
    StochBench(StochArgs),
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct CommonArgs {
    #[arg(long, default_value_t = 0.9)]
    pub gamma_scale: f64,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long, default_value_t = 5_000_000)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Directory for CSV traces and the JSON summary.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Trace decimation; 0 disables traces.
    #[arg(long, default_value_t = 100)]
    pub trace_every: usize,
    #[arg(long, value_enum, default_value_t = FouropStep::Root)]
    pub fourop_step: FouropStep,
}

impl Default for CommonArgs {
    fn default() -> Self {
        CommonArgs {
            gamma_scale: 0.9,
            tol: 1e-6,
            max_iter: 5_000_000,
            seed: 1,
            out: None,
            trace_every: 100,
            fourop_step: FouropStep::Root,
        }
    }
}

/// Finite-sum parameters; `p` defaults to `1/parts`, `λ` to `1 − p/2`.
#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SvrArgs {
    #[arg(long, default_value_t = 10)]
    pub parts: usize,
    #[arg(long)]
    pub p: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
}

impl Default for SvrArgs {
    fn default() -> Self {
        SvrArgs { parts: 10, p: None, lambda: None }
    }
}

impl SvrArgs {
    pub fn p(&self) -> f64 {
        self.p.unwrap_or(1.0 / self.parts.max(1) as f64)
    }

    pub fn lambda(&self) -> f64 {
        self.lambda.unwrap_or(1.0 - self.p() / 2.0)
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct QpArgs {
    #[arg(long, value_delimiter = ',', default_value = "fbhf,nfbhf-fourop")]
    pub algo: Vec<Algo>,
    #[arg(long = "n", value_delimiter = ',', default_value = "400")]
    pub n: Vec<usize>,
    #[arg(long = "q", value_delimiter = ',', default_value = "20,50")]
    pub q: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    pub reps: usize,
    /// Eight sizes N ∈ {2000, 4000} × q ∈ {100, 200, 500, 1000}, ten
    /// instances each. Overrides --n, --q and --reps.
    #[arg(long)]
    pub full_scale: bool,
    #[command(flatten)]
    #[serde(flatten)]
    pub svr: SvrArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: CommonArgs,
}

impl Default for QpArgs {
    fn default() -> Self {
        QpArgs {
            algo: vec![Algo::Fbhf, Algo::NfbhfFourop],
            n: vec![400],
            q: vec![20, 50],
            reps: 3,
            full_scale: false,
            svr: SvrArgs::default(),
            common: CommonArgs::default(),
        }
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct PortfolioArgs {
    #[arg(long, value_delimiter = ',', default_value = "fbhf,nfbhf-fourop")]
    pub algo: Vec<Algo>,
    /// OR-Library text file, or a `.json` instance.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Required returns; a JSON instance supplies its own when omitted.
    #[arg(long, value_delimiter = ',')]
    pub r: Vec<f64>,
    #[command(flatten)]
    #[serde(flatten)]
    pub svr: SvrArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SyntheticArgs {
    #[arg(long, value_delimiter = ',', default_value = "fbhf,svr")]
    pub algo: Vec<Algo>,
    #[arg(long = "n", default_value_t = 50)]
    pub n: usize,
    #[arg(long, default_value_t = 1.0)]
    pub rho: f64,
    /// Seeds for the variance-reduced runs.
    #[arg(long, default_value_t = 20)]
    pub reps: usize,
    /// Iterations per run; the tolerance is ignored so traces align.
    #[arg(long, default_value_t = 1000)]
    pub iters: usize,
    #[arg(long, default_value_t = 10)]
    pub parts: usize,
    #[arg(long, default_value_t = 0.1)]
    pub p: f64,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: CommonArgs,
}

impl Default for SyntheticArgs {
    fn default() -> Self {
        SyntheticArgs {
            algo: vec![Algo::Fbhf, Algo::Svr],
            n: 50,
            rho: 1.0,
            reps: 20,
            iters: 1000,
            parts: 10,
            p: 0.1,
            common: CommonArgs::default(),
        }
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct StochArgs {
    #[arg(long = "n", default_value_t = 50)]
    pub n: usize,
    #[arg(long, default_value_t = 1.0)]
    pub rho: f64,
    #[arg(long, default_value_t = 1)]
    pub reps: usize,
    #[command(flatten)]
    #[serde(flatten)]
    pub svr: SvrArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: CommonArgs,
}

impl Default for StochArgs {
    fn default() -> Self {
        StochArgs { n: 50, rho: 1.0, reps: 1, svr: SvrArgs::default(), common: CommonArgs::default() }
    }
}

/// One aggregated line of a benchmark summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub group: String,
    pub algo: String,
    pub runs: usize,
    pub converged: usize,
    pub mean_iterations: f64,
    pub mean_seconds: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_objective: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_component_evals: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fitted_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub certified_rate: Option<f64>,
}

impl SummaryRow {
    fn from_reports(group: String, algo: &str, reports: &[&RunReport]) -> Self {
        let n = reports.len().max(1) as f64;
        let mean = |f: &dyn Fn(&RunReport) -> f64| reports.iter().map(|r| f(r)).sum::<f64>() / n;
        let all = |f: &dyn Fn(&RunReport) -> Option<f64>| {
            let vals: Option<Vec<f64>> = reports.iter().map(|r| f(r)).collect();
            vals.map(|v| v.iter().sum::<f64>() / n)
        };
        SummaryRow {
            group,
            algo: algo.to_string(),
            runs: reports.len(),
            converged: reports.iter().filter(|r| r.converged).count(),
            mean_iterations: mean(&|r| r.iterations as f64),
            mean_seconds: mean(&|r| r.wall_seconds),
            mean_objective: all(&|r| r.final_objective),
            mean_component_evals: all(&|r| r.component_evals.map(|c| c as f64)),
            fitted_rate: None,
            certified_rate: None,
        }
    }
}

/// Everything one subcommand produced.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchOutput {
    pub command: String,
    pub config: serde_json::Value,
    pub reports: Vec<RunReport>,
    pub summary: Vec<SummaryRow>,
}

/// Solver settings shared by every algorithm.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverSettings {
    pub gamma_scale: f64,
    pub stop: StoppingRule,
    pub max_iter: usize,
    pub trace_every: usize,
    pub fourop_step: FouropStep,
}

impl From<&CommonArgs> for SolverSettings {
    fn from(c: &CommonArgs) -> Self {
        SolverSettings {
            gamma_scale: c.gamma_scale,
            stop: StoppingRule::new(c.tol),
            max_iter: c.max_iter,
            trace_every: c.trace_every,
            fourop_step: c.fourop_step,
        }
    }
}

impl SolverSettings {
    fn options(&self) -> SolveOptions {
        SolveOptions { stop: self.stop, max_iter: self.max_iter, trace_every: self.trace_every, initial_momentum: None }
    }
}

/// Seed of repetition `rep` derived from the master seed.
pub fn derive_seed(master: u64, rep: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(rep);
    rng.next_u64()
}

/// The same problem with `B + C` merged into a single Lipschitz operator.
pub fn merge_forward_operators(prob: &SplitProblem) -> HarnessResult<SplitProblem> {
    let dim = prob.dim();
    let merged = SingleValuedOp::Affine {
        matrix: prob.b().linear_part() + prob.c().linear_part(),
        offset: prob.b().offset() + prob.c().offset(),
    };
    let mut out = SplitProblem::new(prob.a().clone(), merged, SingleValuedOp::Zero { dim }, prob.metric().clone())?
        .with_initial_point(prob.initial_point())?
        .with_descriptor(prob.descriptor());
    if let Some(a2) = prob.a2() {
        out = out.with_decomposition(a2.clone())?;
    }
    if let Some(o) = prob.objective() {
        out = out.with_objective(o.clone());
    }
    if let Some(xs) = prob.known_solution() {
        out = out.with_known_solution(xs.clone())?;
    }
    Ok(out)
}

/// Runs one deterministic algorithm on `prob`. `seed` is recorded in the
/// report; for `Svr` it also seeds the row partition and the sampler.
pub fn run_algo(
    prob: &SplitProblem,
    algo: Algo,
    settings: &SolverSettings,
    svr: &SvrArgs,
    seed: u64,
) -> HarnessResult<RunReport> {
    let opts = settings.options();
    let mut report = match algo {
        Algo::Fb => {
            if !prob.b().is_zero() {
                return Err(usage("fb needs a problem with B = 0; use fbhf or tseng"));
            }
            let kernel = prob.kernel(KernelKind::ScaledMetric)?;
            det_solve(prob, &kernel, &StepPlan::fbhf_preset(prob, settings.gamma_scale)?, &opts)?
        }
        Algo::Fbhf => {
            let kernel = prob.kernel(KernelKind::ScaledMetric)?;
            det_solve(prob, &kernel, &StepPlan::fbhf_preset(prob, settings.gamma_scale)?, &opts)?
        }
        Algo::Tseng => {
            let merged = merge_forward_operators(prob)?;
            let kernel = merged.kernel(KernelKind::ScaledMetric)?;
            det_solve(&merged, &kernel, &StepPlan::fbhf_preset(&merged, settings.gamma_scale)?, &opts)?
        }
        Algo::NfbhfFourop => {
            let four = four_operator_form(prob).map_err(|e| match e {
                SplitError::Unsupported(msg) => usage(format!("nfbhf-fourop: {msg}")),
                other => other.into(),
            })?;
            let kernel = four.kernel(KernelKind::Shifted)?;
            let plan = match settings.fourop_step {
                FouropStep::Root => StepPlan::shifted_preset(&four, &kernel, settings.gamma_scale)?,
                FouropStep::Printed => StepPlan::fourop_preset(prob.beta(), prob.mu(), settings.gamma_scale)?,
            };
            det_solve(&four, &kernel, &plan, &opts)?
        }
        Algo::Svr => {
            let oracle = split_b_finite_sum(prob, svr.parts, seed, SamplingScheme::Uniform)?;
            return run_svr(prob, &oracle, settings, svr.p(), svr.lambda(), seed);
        }
    };
    report.algo = algo.label().to_string();
    report.seed = Some(seed);
    Ok(report)
}

/// Largest `γ` with `1 − λ − γ²θ² − γβ/2 ≥ ε`, the binding margin when the
/// kernel carries no momentum.
pub fn svr_gamma_bound(lambda: f64, theta: f64, beta: f64, eps: f64) -> HarnessResult<f64> {
    let rhs = 1.0 - lambda - eps;
    if !(rhs > 0.0) {
        return Err(usage(format!("lambda = {lambda} leaves no room for a positive step")));
    }
    let (a, b) = (theta * theta, beta / 2.0);
    let g = if a == 0.0 {
        if b == 0.0 {
            return Err(usage("step size is unbounded for B = 0 and C = 0"));
        }
        rhs / b
    } else {
        2.0 * rhs / (b + (b * b + 4.0 * a * rhs).sqrt())
    };
    Ok(g)
}

/// Variance-reduced run with `γ = gamma_scale·` [`svr_gamma_bound`].
pub fn run_svr(
    prob: &SplitProblem,
    oracle: &FiniteSumOracle,
    settings: &SolverSettings,
    p: f64,
    lambda: f64,
    seed: u64,
) -> HarnessResult<RunReport> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(usage(format!("--p must lie in (0, 1], got {p}")));
    }
    if !(0.0..1.0).contains(&lambda) {
        return Err(usage(format!("--lambda must lie in [0, 1), got {lambda}")));
    }
    let eps = 1e-3;
    let gamma = settings.gamma_scale * svr_gamma_bound(lambda, oracle.theta(), prob.beta(), eps)?;
    let kernel = prob.kernel(KernelKind::ScaledMetric)?;
    let cfg = StochConfig::new(p, lambda, gamma, derive_seed(seed, u64::MAX));
    let mut report = stoch_solve(prob, oracle, &kernel, &cfg, &settings.options())?;
    report.seed = Some(seed);
    Ok(report)
}

fn check_common(c: &CommonArgs) -> HarnessResult<()> {
    if !(c.tol > 0.0) {
        return Err(usage("--tol must be positive"));
    }
    if !(c.gamma_scale > 0.0) {
        return Err(usage("--gamma-scale must be positive"));
    }
    Ok(())
}

fn check_reps(reps: usize) -> HarnessResult<()> {
    if reps == 0 {
        return Err(usage("--reps must be at least 1"));
    }
    Ok(())
}

/// Thread pool sized by `SPLITKIT_THREADS` when set.
pub fn thread_pool() -> HarnessResult<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("SPLITKIT_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| usage(format!("SPLITKIT_THREADS must be a positive integer, got {v:?}")))?;
        builder = builder.num_threads(n);
    }
    builder.build().map_err(|e| usage(format!("cannot build thread pool: {e}")))
}

fn to_config<T: Serialize>(args: &T) -> serde_json::Value {
    serde_json::to_value(args).expect("argument structs serialize")
}

pub fn cmd_qp_bench(args: &QpArgs) -> HarnessResult<BenchOutput> {
    check_common(&args.common)?;
    let (sizes, reps) = if args.full_scale {
        let sizes = [2000, 4000]
            .iter()
            .flat_map(|&n| [100, 200, 500, 1000].into_iter().map(move |q| (n, q)))
            .collect::<Vec<_>>();
        (sizes, 10)
    } else {
        let sizes = args.n.iter().flat_map(|&n| args.q.iter().map(move |&q| (n, q))).collect::<Vec<_>>();
        (sizes, args.reps)
    };
    check_reps(reps)?;
    if args.algo.is_empty() {
        return Err(usage("--algo needs at least one algorithm"));
    }
    for &(n, q) in &sizes {
        if n == 0 || n % 2 == 1 {
            return Err(usage(format!("N must be even and positive, got {n}")));
        }
        if q == 0 {
            return Err(usage("q must be at least 1"));
        }
    }
    let settings = SolverSettings::from(&args.common);
    let jobs: Vec<(usize, usize, u64)> =
        sizes.iter().flat_map(|&(n, q)| (0..reps as u64).map(move |rep| (n, q, rep))).collect();
    let pool = thread_pool()?;
    let per_job: Vec<HarnessResult<Vec<RunReport>>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(n, q, rep)| {
                let seed = derive_seed(args.common.seed, rep);
                let prob = build_qp_saddle(n, q, seed)?;
                args.algo.iter().map(|&a| run_algo(&prob, a, &settings, &args.svr, seed)).collect()
            })
            .collect()
    });
    let mut reports = Vec::new();
    for r in per_job {
        reports.extend(r?);
    }

    let mut summary = Vec::new();
    for &(n, q) in &sizes {
        for algo in &args.algo {
            let prefix = format!("qp-saddle N={n} q={q} ");
            let rows: Vec<&RunReport> =
                reports.iter().filter(|r| r.algo == algo.label() && r.problem.starts_with(&prefix)).collect();
            summary.push(SummaryRow::from_reports(format!("N={n} q={q}"), algo.label(), &rows));
        }
    }
    Ok(BenchOutput { command: "qp-bench".into(), config: to_config(args), reports, summary })
}

/// Reads an OR-Library file, or a JSON instance when the path ends in `.json`.
pub fn load_portfolio(path: &Path, r: &[f64]) -> HarnessResult<Vec<PortfolioInstance>> {
    let text = fs::read_to_string(path).map_err(|source| HarnessError::Io { path: path.to_path_buf(), source })?;
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    if is_json {
        let base = PortfolioInstance::from_json(&text)?;
        if r.is_empty() {
            return Ok(vec![base]);
        }
        return Ok(r.iter().map(|&r| PortfolioInstance { r, ..base.clone() }).collect());
    }
    let assets = parse_orlibrary(&text)?;
    if r.is_empty() {
        return Err(usage("--r is required with an OR-Library dataset"));
    }
    Ok(r.iter().map(|&r| PortfolioInstance::new(assets.clone(), r)).collect())
}

pub fn cmd_portfolio(args: &PortfolioArgs) -> HarnessResult<BenchOutput> {
    check_common(&args.common)?;
    if args.algo.is_empty() {
        return Err(usage("--algo needs at least one algorithm"));
    }
    let instances = load_portfolio(&args.dataset, &args.r)?;
    let settings = SolverSettings::from(&args.common);
    let mut reports = Vec::new();
    let mut summary = Vec::new();
    for inst in &instances {
        let prob = build_portfolio(inst)?;
        for &algo in &args.algo {
            let report = run_algo(&prob, algo, &settings, &args.svr, args.common.seed)?;
            summary.push(SummaryRow::from_reports(format!("r={}", inst.r), algo.label(), &[&report]));
            reports.push(report);
        }
    }
    Ok(BenchOutput { command: "portfolio".into(), config: to_config(args), reports, summary })
}

/// Entry-wise median across equally long traces.
fn median_trace(traces: &[Vec<f64>]) -> Vec<f64> {
    let len = traces.iter().map(Vec::len).min().unwrap_or(0);
    (0..len)
        .map(|k| {
            let mut col: Vec<f64> = traces.iter().map(|t| t[k]).collect();
            col.sort_by(f64::total_cmp);
            let m = col.len() / 2;
            if col.len() % 2 == 1 {
                col[m]
            } else {
                0.5 * (col[m - 1] + col[m])
            }
        })
        .collect()
}

fn squared_errors(report: &RunReport) -> Vec<f64> {
    report.trace.iter().filter_map(|t| t.error.map(|e| e * e)).collect()
}

pub fn cmd_synthetic(args: &SyntheticArgs) -> HarnessResult<BenchOutput> {
    check_common(&args.common)?;
    check_reps(args.reps)?;
    if args.iters < 10 {
        return Err(usage("--iters must be at least 10 for a rate fit"));
    }
    let settings = SolverSettings {
        stop: StoppingRule::new(0.0),
        max_iter: args.iters,
        trace_every: 1,
        ..SolverSettings::from(&args.common)
    };
    let seed = args.common.seed;
    let group = format!("n={} rho={}", args.n, args.rho);
    let mut reports = Vec::new();
    let mut summary = Vec::new();
    for &algo in &args.algo {
        if algo == Algo::Svr {
            let (mut rs, row) = synthetic_svr(args, &settings, &group)?;
            reports.append(&mut rs);
            summary.push(row);
            continue;
        }
        let prob = build_strong_synthetic(args.n, args.rho, seed)?;
        let report = run_algo(&prob, algo, &settings, &SvrArgs::default(), seed)?;
        let fitted = fit_geometric_rate(&squared_errors(&report))?;
        let (t, _, _) = best_det_rate_factor(report.gamma, args.rho, prob.mu(), prob.beta(), 0.0, 0.0)?;
        let mut row = SummaryRow::from_reports(group.clone(), algo.label(), &[&report]);
        row.fitted_rate = Some(fitted);
        row.certified_rate = Some(1.0 / (1.0 + t));
        summary.push(row);
        reports.push(report);
    }
    Ok(BenchOutput { command: "synthetic".into(), config: to_config(args), reports, summary })
}

fn synthetic_svr(
    args: &SyntheticArgs,
    settings: &SolverSettings,
    group: &str,
) -> HarnessResult<(Vec<RunReport>, SummaryRow)> {
    if !(args.rho > 0.0) {
        return Err(usage("svr on the synthetic needs --rho > 0"));
    }
    let inst = build_finite_sum_synthetic(args.n, args.rho, args.parts, args.common.seed, SamplingScheme::Uniform)?;
    let (prob, oracle) = (&inst.problem, &inst.oracle);
    let p = args.p;
    // With no momentum the α-term of the step is void and α only shrinks c.
    let alpha = 0.0;
    let (lambda, gamma) = strong_preset(p, prob.beta(), oracle.theta(), 0.0, alpha)?;
    let kernel = KernelSpec::scaled_metric();
    let rate_l = (3.0 - p) / 2.0;
    let c = stoch_rate_factor(p, gamma, inst.b_modulus, 0.0, 0.0, alpha, 1.0, rate_l)?;
    let pool = thread_pool()?;
    let reports: Vec<HarnessResult<RunReport>> = pool.install(|| {
        (0..args.reps as u64)
            .into_par_iter()
            .map(|rep| {
                let seed = derive_seed(args.common.seed, rep);
                let cfg = StochConfig::new(p, lambda, gamma, seed);
                let mut r = stoch_solve(prob, oracle, &kernel, &cfg, &settings.options())?;
                r.seed = Some(seed);
                Ok(r)
            })
            .collect()
    });
    let reports = reports.into_iter().collect::<HarnessResult<Vec<_>>>()?;
    let traces: Vec<Vec<f64>> = reports.iter().map(squared_errors).collect();
    let fitted = fit_geometric_rate(&median_trace(&traces))?;
    let refs: Vec<&RunReport> = reports.iter().collect();
    let mut row = SummaryRow::from_reports(group.to_string(), "svr", &refs);
    row.fitted_rate = Some(fitted);
    row.certified_rate = Some(1.0 / (1.0 + c / (2.0 * rate_l)));
    Ok((reports, row))
}

pub fn cmd_stoch_bench(args: &StochArgs) -> HarnessResult<BenchOutput> {
    check_common(&args.common)?;
    check_reps(args.reps)?;
    if args.svr.parts == 0 {
        return Err(usage("--parts must be at least 1"));
    }
    let settings = SolverSettings::from(&args.common);
    let (p, lambda) = (args.svr.p(), args.svr.lambda());
    let pool = thread_pool()?;
    let per_rep: Vec<HarnessResult<[RunReport; 2]>> = pool.install(|| {
        (0..args.reps as u64)
            .into_par_iter()
            .map(|rep| {
                let seed = derive_seed(args.common.seed, rep);
                let inst = build_finite_sum_synthetic(args.n, args.rho, args.svr.parts, seed, SamplingScheme::Uniform)?;
                stoch_bench_pair(&inst.problem, &inst.oracle, &settings, p, lambda, seed)
            })
            .collect()
    });
    let mut reports = Vec::new();
    for r in per_rep {
        reports.extend(r?);
    }
    let group = format!("n={} parts={} p={p}", args.n, args.svr.parts);
    let summary = ["fbhf", "svr"]
        .iter()
        .map(|a| {
            let rows: Vec<&RunReport> = reports.iter().filter(|r| r.algo == *a).collect();
            SummaryRow::from_reports(group.clone(), a, &rows)
        })
        .collect();
    Ok(BenchOutput { command: "stoch-bench".into(), config: to_config(args), reports, summary })
}

/// Full-batch and variance-reduced runs at the same step size. The
/// full-batch method evaluates every component at `x_k` and `y_k`.
pub fn stoch_bench_pair(
    prob: &SplitProblem,
    oracle: &FiniteSumOracle,
    settings: &SolverSettings,
    p: f64,
    lambda: f64,
    seed: u64,
) -> HarnessResult<[RunReport; 2]> {
    let svr = run_svr(prob, oracle, settings, p, lambda, seed)?;
    let kernel = prob.kernel(KernelKind::ScaledMetric)?;
    let plan = StepPlan { validation: Validation::Report, ..StepPlan::constant(svr.gamma) };
    let mut det = det_solve(prob, &kernel, &plan, &settings.options())?;
    det.algo = "fbhf".into();
    det.seed = Some(seed);
    det.component_evals = Some(2 * oracle.len() as u64 * det.iterations as u64);
    Ok([det, svr])
}

/// Writes one trace CSV per report, a solution CSV per portfolio run and
/// `summary.json` into `dir`.
pub fn write_outputs(dir: &Path, out: &BenchOutput) -> HarnessResult<()> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| HarnessError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    for (i, r) in out.reports.iter().enumerate() {
        let path = dir.join(format!("{}-{i:03}-{}.csv", out.command, r.algo));
        fs::write(&path, r.trace_csv()).map_err(io(&path))?;
        if out.command == "portfolio" {
            let path = dir.join(format!("{}-{i:03}-{}-solution.csv", out.command, r.algo));
            let mut text = String::from("index,value\n");
            for (k, v) in r.solution.iter().enumerate() {
                text.push_str(&format!("{k},{v:e}\n"));
            }
            fs::write(&path, text).map_err(io(&path))?;
        }
    }
    let path = dir.join("summary.json");
    let json = serde_json::to_string_pretty(out).expect("summary serializes");
    fs::write(&path, json).map_err(io(&path))?;
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6e}")).unwrap_or_else(|| "-".into())
}

pub fn print_summary(out: &BenchOutput) {
    println!("{}: {} runs", out.command, out.reports.len());
    println!(
        "{:<28} {:<14} {:>6} {:>12} {:>10} {:>14} {:>12} {:>10} {:>10}",
        "group", "algo", "conv", "av.iter", "av.time", "objective", "evals", "rate", "cert"
    );
    for row in &out.summary {
        println!(
            "{:<28} {:<14} {:>6} {:>12.1} {:>10.3} {:>14} {:>12} {:>10} {:>10}",
            row.group,
            row.algo,
            format!("{}/{}", row.converged, row.runs),
            row.mean_iterations,
            row.mean_seconds,
            opt(row.mean_objective),
            row.mean_component_evals.map(|e| format!("{e:.0}")).unwrap_or_else(|| "-".into()),
            row.fitted_rate.map(|x| format!("{x:.6}")).unwrap_or_else(|| "-".into()),
            row.certified_rate.map(|x| format!("{x:.6}")).unwrap_or_else(|| "-".into()),
        );
    }
}

fn out_dir(cmd: &Command) -> Option<&Path> {
    match cmd {
        Command::QpBench(a) => a.common.out.as_deref(),
        Command::Portfolio(a) => a.common.out.as_deref(),
        Command::Synthetic(a) => a.common.out.as_deref(),
        Command::StochBench(a) => a.common.out.as_deref(),
    }
}

pub fn execute(cli: &Cli) -> HarnessResult<BenchOutput> {
    let out = match &cli.command {
        Command::QpBench(a) => cmd_qp_bench(a)?,
        Command::Portfolio(a) => cmd_portfolio(a)?,
        Command::Synthetic(a) => cmd_synthetic(a)?,
        Command::StochBench(a) => cmd_stoch_bench(a)?,
    };
    if let Some(dir) = out_dir(&cli.command) {
        write_outputs(dir, &out)?;
    }
    Ok(out)
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(out) => {
            print_summary(&out);
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// `x` at the end of a run as a vector.
pub fn solution_vector(report: &RunReport) -> Vector {
    Vector::from_vec(report.solution.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::build_strong_synthetic;

    #[test]
    fn derived_seeds_are_stable_and_distinct() {
        assert_eq!(derive_seed(7, 0), derive_seed(7, 0));
        assert_ne!(derive_seed(7, 0), derive_seed(7, 1));
        assert_ne!(derive_seed(7, 0), derive_seed(8, 0));
    }

    #[test]
    fn median_of_traces() {
        let t = vec![vec![1.0, 5.0], vec![3.0, 4.0], vec![2.0, 6.0, 9.0]];
        assert_eq!(median_trace(&t), vec![2.0, 5.0]);
        let t = vec![vec![1.0], vec![3.0]];
        assert_eq!(median_trace(&t), vec![2.0]);
    }

    #[test]
    fn svr_gamma_bound_zeroes_second_margin() {
        for (lambda, theta, beta) in [(0.5, 2.0, 1.0), (0.9, 10.0, 0.0), (0.0, 0.0, 3.0)] {
            let g = svr_gamma_bound(lambda, theta, beta, 1e-3).unwrap();
            let m2 = 1.0 - lambda - g * g * theta * theta - g * beta / 2.0;
            assert!((m2 - 1e-3).abs() < 1e-12);
        }
        assert!(svr_gamma_bound(1.0, 1.0, 1.0, 1e-3).is_err());
        assert!(svr_gamma_bound(0.5, 0.0, 0.0, 1e-3).is_err());
    }

    #[test]
    fn merged_operators_agree_pointwise() {
        let prob = build_strong_synthetic(6, 0.5, 3).unwrap();
        let merged = merge_forward_operators(&prob).unwrap();
        let z = Vector::from_fn(6, |i, _| i as f64 - 2.5);
        let lhs = merged.b().eval(&z).unwrap();
        let rhs = prob.b().eval(&z).unwrap() + prob.c().eval(&z).unwrap();
        assert!((lhs - rhs).amax() < 1e-12);
        assert!(merged.c().is_zero());
        assert_eq!(merged.known_solution(), prob.known_solution());
    }

    #[test]
    fn forward_backward_needs_zero_b() {
        let prob = build_strong_synthetic(4, 1.0, 1).unwrap();
        let err = run_algo(&prob, Algo::Fb, &SolverSettings::from(&CommonArgs::default()), &SvrArgs::default(), 1)
            .unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn qp_bench_rejects_bad_config() {
        let odd = QpArgs { n: vec![7], ..QpArgs::default() };
        assert_eq!(cmd_qp_bench(&odd).unwrap_err().exit_code(), 2);
        let no_reps = QpArgs { reps: 0, ..QpArgs::default() };
        assert_eq!(cmd_qp_bench(&no_reps).unwrap_err().exit_code(), 2);
        let mut bad_tol = QpArgs::default();
        bad_tol.common.tol = 0.0;
        assert_eq!(cmd_qp_bench(&bad_tol).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn qp_bench_summary_rows() {
        let args = QpArgs { n: vec![20], q: vec![4], reps: 2, ..QpArgs::default() };
        let out = cmd_qp_bench(&args).unwrap();
        assert_eq!(out.reports.len(), 4);
        assert_eq!(out.summary.len(), 2);
        assert!(out.summary.iter().all(|r| r.runs == 2 && r.converged == 2));
        let again = cmd_qp_bench(&args).unwrap();
        let iters = |o: &BenchOutput| o.reports.iter().map(|r| r.iterations).collect::<Vec<_>>();
        assert_eq!(iters(&out), iters(&again));
    }

    #[test]
    fn stoch_bench_reduction_case_matches_full_batch() {
        let args = StochArgs { n: 12, svr: SvrArgs { parts: 1, p: Some(1.0), lambda: None }, ..StochArgs::default() };
        let out = cmd_stoch_bench(&args).unwrap();
        let (det, svr) = (&out.reports[0], &out.reports[1]);
        assert_eq!(det.iterations, svr.iterations);
        assert_eq!(det.component_evals, svr.component_evals);
        assert_eq!(det.solution, svr.solution);
    }

    #[test]
    fn stoch_bench_amortized_cost() {
        let args = StochArgs { n: 60, svr: SvrArgs { parts: 50, p: None, lambda: None }, ..StochArgs::default() };
        let out = cmd_stoch_bench(&args).unwrap();
        let svr = &out.reports[1];
        let per_iter = svr.component_evals.unwrap() as f64 / svr.iterations as f64;
        // one sampled component plus a full pass of 50 with probability 1/50
        assert!((per_iter - 2.0).abs() < 0.3, "per-iteration evals {per_iter}");
    }

    #[test]
    fn unreachable_tolerance_is_reported() {
        let mut args = StochArgs { n: 10, ..StochArgs::default() };
        args.common.max_iter = 3;
        let out = cmd_stoch_bench(&args).unwrap();
        assert!(out.reports.iter().all(|r| !r.converged && r.iterations == 3));
    }

    #[test]
    fn synthetic_without_strong_monotonicity_claims_nothing() {
        let args = SyntheticArgs { algo: vec![Algo::Fbhf], rho: 0.0, n: 10, iters: 200, ..SyntheticArgs::default() };
        let out = cmd_synthetic(&args).unwrap();
        assert_eq!(out.summary[0].certified_rate, Some(1.0));
    }
}
