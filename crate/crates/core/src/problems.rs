//! Problem builders: random constrained QP saddle problems, mean-variance
//! portfolio saddle problems read from OR-Library port files, and strongly
//! monotone synthetics with a known solution.

use std::ops::Range;

use nalgebra::SymmetricEigen;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Result, SplitError};
use crate::metric::{Matrix, Metric, Vector};
use crate::operators::{estimate_opnorm, SetValuedOp, SingleValuedOp};
use crate::solver_det::{Objective, SplitProblem};
use crate::solver_stoch::{FiniteSumOracle, SamplingScheme};

fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

fn normal_vector(rng: &mut ChaCha8Rng, len: usize) -> Vector {
    Vector::from_fn(len, |_, _| rng.sample(StandardNormal))
}

/// Data of `min ½‖Gx − b‖²  s.t.  x ∈ [0,1]^N, Dx ≤ 0`, written as the
/// saddle inclusion on `(x, u) ∈ ℝ^{N+q}`.
#[derive(Debug, Clone, PartialEq)]
pub struct QpSaddleData {
    pub g: Matrix,
    pub d: Matrix,
    pub b: Vector,
    pub initial_point: Vector,
    pub seed: u64,
}

impl QpSaddleData {
    /// Standard normal entries drawn in the order `G`, `D`, `b`, `(x₀, u₀)`.
    pub fn generate(n: usize, q: usize, seed: u64) -> Result<Self> {
        if n == 0 || !n.is_multiple_of(2) {
            return Err(invalid(format!("N = {n} must be positive and even")));
        }
        if q == 0 {
            return Err(invalid("q must be at least 1"));
        }
        let m = n / 2;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = normal_matrix(&mut rng, m, n);
        let d = normal_matrix(&mut rng, q, n);
        let b = normal_vector(&mut rng, m);
        let initial_point = normal_vector(&mut rng, n + q);
        Ok(QpSaddleData { g, d, b, initial_point, seed })
    }
}

/// `A = N_{[0,1]^N} × N_{ℝ₊^q}`, `B(x,u) = (Dᵀu, −Dx)`, `C(x,u) = (Gᵀ(Gx − b), 0)`.
pub fn build_qp_saddle(n: usize, q: usize, seed: u64) -> Result<SplitProblem> {
    build_qp_saddle_from(QpSaddleData::generate(n, q, seed)?)
}

pub fn build_qp_saddle_from(data: QpSaddleData) -> Result<SplitProblem> {
    let (q, n) = data.d.shape();
    check_dim(n, data.g.ncols())?;
    check_dim(data.g.nrows(), data.b.len())?;
    let a = SetValuedOp::Product(vec![SetValuedOp::unit_box(n), SetValuedOp::NonnegOrthantNormalCone { dim: q }]);
    let b = SingleValuedOp::SkewSaddle { d: data.d.clone(), offset: Vector::zeros(q) };
    let c = SingleValuedOp::LeastSquaresGradient { g: data.g.clone(), b: data.b.clone(), tail: q };
    let descriptor = format!("qp-saddle N={n} q={q} seed={}", data.seed);
    Ok(SplitProblem::new(a, b, c, Metric::identity(n + q))?
        .with_objective(Objective::LeastSquares { g: data.g, b: data.b })
        .with_initial_point(data.initial_point)?
        .with_descriptor(descriptor))
}

/// Splits a skew saddle `B` into two equal halves `B₁ + B₂`.
pub fn split_saddle_b(prob: &SplitProblem) -> Result<(SingleValuedOp, SingleValuedOp)> {
    match prob.b() {
        b @ SingleValuedOp::SkewSaddle { .. } => {
            let half = SingleValuedOp::Scaled { inner: Box::new(b.clone()), factor: 0.5 };
            Ok((half.clone(), half))
        }
        _ => Err(SplitError::Unsupported("operator splitting needs a skew saddle B".into())),
    }
}

/// The same inclusion with `A₁ = A`, `A₂ = B₁` moved into the set-valued
/// part and `B₂` as the half-forward operator.
pub fn four_operator_form(prob: &SplitProblem) -> Result<SplitProblem> {
    let (b1, b2) = split_saddle_b(prob)?;
    let mut out = SplitProblem::new(prob.a().clone(), b2, prob.c().clone(), prob.metric().clone())?
        .with_decomposition(b1)?
        .with_initial_point(prob.initial_point())?
        .with_descriptor(prob.descriptor());
    if let Some(xs) = prob.known_solution() {
        out = out.with_known_solution(xs.clone())?;
    }
    if let Some(o) = prob.objective() {
        out = out.with_objective(o.clone());
    }
    Ok(out)
}

/// Asset statistics of an OR-Library port file.
#[derive(Debug, Clone, PartialEq)]
pub struct AssetData {
    pub means: Vec<f64>,
    pub stddevs: Vec<f64>,
    /// Full symmetric correlation matrix.
    pub corr: Matrix,
}

impl AssetData {
    pub fn n(&self) -> usize {
        self.means.len()
    }

    /// `H_ij = corr_ij·σ_i·σ_j`, symmetrized.
    pub fn covariance(&self) -> Matrix {
        let n = self.n();
        let h = Matrix::from_fn(n, n, |i, j| self.corr[(i, j)] * self.stddevs[i] * self.stddevs[j]);
        (&h + h.transpose()) * 0.5
    }

    /// Upper-triangle correlation entries as zero-based `(i, j, corr)`.
    pub fn corr_entries(&self) -> Vec<(usize, usize, f64)> {
        let n = self.n();
        let mut out = Vec::with_capacity(n * (n + 1) / 2);
        for i in 0..n {
            for j in i..n {
                out.push((i, j, self.corr[(i, j)]));
            }
        }
        out
    }

    /// Random assets from a Gaussian factor model: means in
    /// `[-0.008, 0.004)`, standard deviations around 0.01.
    pub fn synthetic(n: usize, seed: u64) -> AssetData {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = normal_matrix(&mut rng, n, n + 2);
        let cov = &f * f.transpose();
        let sd: Vec<f64> = (0..n).map(|i| cov[(i, i)].sqrt()).collect();
        let corr = Matrix::from_fn(n, n, |i, j| {
            let (lo, hi) = (i.min(j), i.max(j));
            if i == j {
                1.0
            } else {
                cov[(lo, hi)] / (sd[lo] * sd[hi])
            }
        });
        let means = (0..n).map(|_| rng.random_range(-0.008..0.004)).collect();
        AssetData { means, stddevs: sd.iter().map(|s| s * 0.01).collect(), corr }
    }

    /// OR-Library text; parses back to an identical value.
    pub fn to_orlibrary(&self) -> String {
        let mut out = format!("{}\n", self.n());
        for (m, s) in self.means.iter().zip(&self.stddevs) {
            out.push_str(&format!(" {m} {s}\n"));
        }
        for (i, j, c) in self.corr_entries() {
            out.push_str(&format!(" {} {} {c}\n", i + 1, j + 1));
        }
        out
    }
}

fn parse_err(line: usize, msg: impl Into<String>) -> SplitError {
    SplitError::Parse { line, msg: msg.into() }
}

fn parse_num<T: std::str::FromStr>(tok: &str, line: usize, what: &str) -> Result<T> {
    tok.parse().map_err(|_| parse_err(line, format!("invalid {what} '{tok}'")))
}

/// Parses the OR-Library portfolio format: the asset count, one
/// `mean stddev` line per asset, then `i j corr` lines (1-based) covering
/// every pair `i ≤ j`. Pairs may be listed in either order.
pub fn parse_orlibrary(text: &str) -> Result<AssetData> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(k, l)| (k + 1, l.split_whitespace().collect::<Vec<_>>()))
        .filter(|(_, toks)| !toks.is_empty());

    let (line, toks) = lines.next().ok_or_else(|| parse_err(1, "empty input"))?;
    let n: usize = parse_num(toks[0], line, "asset count")?;
    if n == 0 {
        return Err(parse_err(line, "asset count must be positive"));
    }
    let mut means = Vec::with_capacity(n);
    let mut stddevs = Vec::with_capacity(n);
    let mut last_line = line;
    for k in 0..n {
        let (line, toks) = lines
            .next()
            .ok_or_else(|| parse_err(last_line + 1, format!("missing mean/stddev line for asset {}", k + 1)))?;
        if toks.len() != 2 {
            return Err(parse_err(line, "expected 'mean stddev'"));
        }
        means.push(parse_num::<f64>(toks[0], line, "mean")?);
        let s: f64 = parse_num(toks[1], line, "stddev")?;
        if !(s >= 0.0) {
            return Err(parse_err(line, "negative standard deviation"));
        }
        stddevs.push(s);
        last_line = line;
    }

    let mut corr = Matrix::zeros(n, n);
    let mut seen = vec![false; n * n];
    for (line, toks) in lines {
        last_line = line;
        if toks.len() != 3 {
            return Err(parse_err(line, "expected 'i j corr'"));
        }
        let i: usize = parse_num(toks[0], line, "index")?;
        let j: usize = parse_num(toks[1], line, "index")?;
        let c: f64 = parse_num(toks[2], line, "correlation")?;
        if i == 0 || j == 0 || i > n || j > n {
            return Err(parse_err(line, format!("pair ({i}, {j}) out of range 1..={n}")));
        }
        if i == j && (c - 1.0).abs() > 1e-9 {
            return Err(parse_err(line, format!("diagonal correlation for asset {i} is {c}, expected 1")));
        }
        let (lo, hi) = (i.min(j) - 1, i.max(j) - 1);
        corr[(lo, hi)] = c;
        corr[(hi, lo)] = c;
        seen[lo * n + hi] = true;
    }
    for i in 0..n {
        for j in i..n {
            if !seen[i * n + j] {
                return Err(parse_err(last_line + 1, format!("missing correlation for pair ({}, {})", i + 1, j + 1)));
            }
        }
    }
    Ok(AssetData { means, stddevs, corr })
}

/// Mean-variance instance: asset data, group floors and the target return.
#[derive(Debug, Clone, PartialEq)]
pub struct PortfolioInstance {
    pub assets: AssetData,
    /// Zero-based half-open index ranges, each required to hold weight ≥ 0.3.
    pub groups: Vec<Range<usize>>,
    pub r: f64,
}

/// JSON layout: 1-based `corr` pairs and inclusive 1-based `groups`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PortfolioJson {
    n: usize,
    means: Vec<f64>,
    stddevs: Vec<f64>,
    corr: Vec<(usize, usize, f64)>,
    groups: Vec<(usize, usize)>,
    r: f64,
}

/// Three contiguous blocks of near-equal size.
pub fn default_groups(n: usize) -> Vec<Range<usize>> {
    let base = n / 3;
    let extra = n % 3;
    let mut out = Vec::with_capacity(3);
    let mut start = 0;
    for k in 0..3 {
        let len = base + usize::from(k < extra);
        out.push(start..start + len);
        start += len;
    }
    out
}

impl PortfolioInstance {
    pub fn new(assets: AssetData, r: f64) -> Self {
        let groups = default_groups(assets.n());
        PortfolioInstance { assets, groups, r }
    }

    pub fn to_json(&self) -> String {
        let doc = PortfolioJson {
            n: self.assets.n(),
            means: self.assets.means.clone(),
            stddevs: self.assets.stddevs.clone(),
            corr: self.assets.corr_entries().into_iter().map(|(i, j, c)| (i + 1, j + 1, c)).collect(),
            groups: self.groups.iter().map(|g| (g.start + 1, g.end)).collect(),
            r: self.r,
        };
        serde_json::to_string_pretty(&doc).expect("instance serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: PortfolioJson = serde_json::from_str(text).map_err(|e| parse_err(e.line(), e.to_string()))?;
        let n = doc.n;
        if doc.means.len() != n || doc.stddevs.len() != n {
            return Err(parse_err(0, "means and stddevs must have n entries"));
        }
        let mut text = format!("{n}\n");
        for (m, s) in doc.means.iter().zip(&doc.stddevs) {
            text.push_str(&format!("{m} {s}\n"));
        }
        for (i, j, c) in &doc.corr {
            text.push_str(&format!("{i} {j} {c}\n"));
        }
        let assets = parse_orlibrary(&text)?;
        let groups = doc
            .groups
            .iter()
            .map(|&(lo, hi)| if lo == 0 { Err(parse_err(0, "groups are 1-based")) } else { Ok(lo - 1..hi) })
            .collect::<Result<Vec<_>>>()?;
        Ok(PortfolioInstance { assets, groups, r: doc.r })
    }
}

fn check_partition(groups: &[Range<usize>], n: usize) -> Result<()> {
    let mut sorted: Vec<&Range<usize>> = groups.iter().collect();
    sorted.sort_by_key(|g| g.start);
    let mut next = 0;
    for g in sorted {
        if g.start != next || g.end <= g.start {
            return Err(invalid(format!("groups do not partition 1..={n}")));
        }
        next = g.end;
    }
    if next != n {
        return Err(invalid(format!("groups do not partition 1..={n}")));
    }
    Ok(())
}

/// Group floor used in every group constraint.
pub const GROUP_FLOOR: f64 = 0.3;

/// `min ½xᵀHx` over the capped simplex subject to `mᵀx ≥ r` and the group
/// floors, as the saddle inclusion on `(x, u) ∈ ℝ^{n+1+groups}`:
/// `A = N_simplex × N_{ℝ₊}`, `B(x,u) = (Dᵀu, −Dx − b)`, `C(x,u) = (Hx, 0)`.
/// Starts from `x = 1/n`, `u = 0`.
pub fn build_portfolio(instance: &PortfolioInstance) -> Result<SplitProblem> {
    let n = instance.assets.n();
    check_partition(&instance.groups, n)?;
    let h = instance.assets.covariance();
    let eig = SymmetricEigen::new(h.clone());
    let min_eig = eig.eigenvalues.min();
    if min_eig < -1e-10 * eig.eigenvalues.amax().max(1.0) {
        return Err(invalid(format!("covariance is not positive semidefinite (eigenvalue {min_eig:.3e})")));
    }
    let q = 1 + instance.groups.len();
    let mut d = Matrix::zeros(q, n);
    for (j, m) in instance.assets.means.iter().enumerate() {
        d[(0, j)] = -m;
    }
    for (k, g) in instance.groups.iter().enumerate() {
        for j in g.clone() {
            d[(k + 1, j)] = -1.0;
        }
    }
    let mut b = Vector::from_element(q, GROUP_FLOOR);
    b[0] = instance.r;

    let a = SetValuedOp::Product(vec![
        SetValuedOp::CappedSimplexNormalCone { dim: n },
        SetValuedOp::NonnegOrthantNormalCone { dim: q },
    ]);
    let bop = SingleValuedOp::SkewSaddle { d, offset: b };
    let c = SingleValuedOp::QuadraticGradient { h: h.clone(), c: Vector::zeros(n), tail: q };
    let mut x0 = Vector::zeros(n + q);
    x0.rows_mut(0, n).fill(1.0 / n as f64);
    Ok(SplitProblem::new(a, bop, c, Metric::identity(n + q))?
        .with_objective(Objective::HalfQuadratic { h })
        .with_initial_point(x0)?
        .with_descriptor(format!("portfolio n={n} r={}", instance.r)))
}

/// Constraint values `Dx + b` at a stacked point, one per dual row.
pub fn portfolio_constraints(prob: &SplitProblem, z: &Vector) -> Result<Vector> {
    match prob.b() {
        SingleValuedOp::SkewSaddle { d, offset } => {
            let (q, n) = d.shape();
            check_dim(n + q, z.len())?;
            Ok(d * z.rows(0, n) + offset)
        }
        _ => Err(SplitError::Unsupported("constraint values need a skew saddle B".into())),
    }
}

/// Random point in `[0,1]^n` with roughly a fifth of the coordinates on each
/// bound, and a vector in the normal cone of the box there.
fn box_point_with_normal(rng: &mut ChaCha8Rng, n: usize) -> (Vector, Vector) {
    let mut x = Vector::zeros(n);
    let mut w = Vector::zeros(n);
    for i in 0..n {
        let t: f64 = rng.random();
        let s: f64 = rng.random_range(0.1..1.0);
        if t < 0.2 {
            x[i] = 0.0;
            w[i] = -s;
        } else if t < 0.4 {
            x[i] = 1.0;
            w[i] = s;
        } else {
            x[i] = rng.random_range(0.1..0.9);
        }
    }
    (x, w)
}

fn skew_part(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Matrix {
    let w = normal_matrix(rng, n, n);
    (&w - w.transpose()) * (0.5 * scale / (n as f64).sqrt())
}

fn psd_part(rng: &mut ChaCha8Rng, n: usize) -> Matrix {
    let r = normal_matrix(rng, n, n);
    r.tr_mul(&r) / n as f64
}

fn check_solution(prob: &SplitProblem, x_star: &Vector) -> Result<()> {
    let f = prob.b().eval(x_star)? + prob.c().eval(x_star)?;
    let y = prob.a().resolvent(1.0, &(x_star - f))?;
    let residual = (y - x_star).norm();
    if residual > 1e-10 {
        return Err(invalid(format!("constructed solution has residual {residual:.3e}")));
    }
    Ok(())
}

/// `A = ρ·Id + N_{[0,1]^n}`, `B` skew linear, `C(x) = Hx − c` with `H`
/// positive semidefinite. The offset `c` is chosen so that a random `x*`
/// with active bounds solves the inclusion exactly.
pub fn build_strong_synthetic(n: usize, rho: f64, seed: u64) -> Result<SplitProblem> {
    if n == 0 {
        return Err(invalid("dimension must be positive"));
    }
    if !(rho >= 0.0) {
        return Err(invalid("strong monotonicity modulus must be nonnegative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = skew_part(&mut rng, n, 1.0);
    let h = psd_part(&mut rng, n);
    let (x_star, w) = box_point_with_normal(&mut rng, n);
    let x0 = normal_vector(&mut rng, n);
    let c = &x_star * rho + w + &k * &x_star + &h * &x_star;
    let a = SetValuedOp::StronglyMonotone { inner: Box::new(SetValuedOp::unit_box(n)), rho };
    let b = SingleValuedOp::Affine { matrix: k, offset: Vector::zeros(n) };
    let cop = SingleValuedOp::QuadraticGradient { h, c, tail: 0 };
    let prob = SplitProblem::new(a, b, cop, Metric::identity(n))?
        .with_initial_point(x0)?
        .with_descriptor(format!("strong-synthetic n={n} rho={rho} seed={seed}"));
    check_solution(&prob, &x_star)?;
    prob.with_known_solution(x_star)
}

/// `A = ρ·Id` alone; the solution is the origin.
pub fn build_strong_identity(n: usize, rho: f64) -> Result<SplitProblem> {
    if !(rho > 0.0) {
        return Err(invalid("strong monotonicity modulus must be positive"));
    }
    let a = SetValuedOp::StronglyMonotone { inner: Box::new(SetValuedOp::Zero { dim: n }), rho };
    SplitProblem::new(a, SingleValuedOp::Zero { dim: n }, SingleValuedOp::Zero { dim: n }, Metric::identity(n))?
        .with_initial_point(Vector::from_element(n, 1.0))?
        .with_known_solution(Vector::zeros(n))
}

/// Finite-sum problem whose `B` is strongly monotone.
#[derive(Debug, Clone)]
pub struct FiniteSumInstance {
    pub problem: SplitProblem,
    pub oracle: FiniteSumOracle,
    /// Strong-monotonicity modulus of `B = ΣBᵢ`.
    pub b_modulus: f64,
}

/// `A = N_{[0,1]^n}`, `Bᵢ = (ρ/N)·Id + Kᵢ` with skew `Kᵢ` so that
/// `B = ρ·Id + ΣKᵢ`, `C(x) = Hx − c`, and a constructed solution.
pub fn build_finite_sum_synthetic(
    n: usize,
    rho: f64,
    n_parts: usize,
    seed: u64,
    scheme: SamplingScheme,
) -> Result<FiniteSumInstance> {
    if n == 0 || n_parts == 0 {
        return Err(invalid("dimension and part count must be positive"));
    }
    if !(rho > 0.0) {
        return Err(invalid("strong monotonicity modulus must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let share = Matrix::identity(n, n) * (rho / n_parts as f64);
    let mut parts = Vec::with_capacity(n_parts);
    let mut total = Matrix::zeros(n, n);
    for _ in 0..n_parts {
        let m = &share + skew_part(&mut rng, n, 1.0 / n_parts as f64);
        total += &m;
        parts.push(SingleValuedOp::Affine { matrix: m, offset: Vector::zeros(n) });
    }
    let h = psd_part(&mut rng, n);
    let (x_star, w) = box_point_with_normal(&mut rng, n);
    let x0 = normal_vector(&mut rng, n);
    let c = w + &total * &x_star + &h * &x_star;
    let b = SingleValuedOp::Affine { matrix: total, offset: Vector::zeros(n) };
    let cop = SingleValuedOp::QuadraticGradient { h, c, tail: 0 };
    let problem = SplitProblem::new(SetValuedOp::unit_box(n), b, cop, Metric::identity(n))?
        .with_initial_point(x0)?
        .with_descriptor(format!("finite-sum-synthetic n={n} rho={rho} parts={n_parts} seed={seed}"));
    check_solution(&problem, &x_star)?;
    let problem = problem.with_known_solution(x_star)?;
    let oracle = FiniteSumOracle::new(parts, problem.metric(), scheme)?;
    Ok(FiniteSumInstance { problem, oracle, b_modulus: rho })
}

/// Splits `B` into `n_parts` components by a seeded random partition of its
/// rows: `Bᵢ(x) = Pᵢ(Mx + c)` with `Pᵢ` selecting the rows of part `i`.
pub fn split_b_finite_sum(
    prob: &SplitProblem,
    n_parts: usize,
    seed: u64,
    scheme: SamplingScheme,
) -> Result<FiniteSumOracle> {
    let dim = prob.dim();
    if n_parts == 0 {
        return Err(invalid("part count must be at least 1"));
    }
    if n_parts > dim {
        return Err(invalid(format!("cannot split {dim} rows into {n_parts} parts")));
    }
    let m = prob.b().linear_part();
    let offset = prob.b().offset();
    if n_parts == 1 {
        let comp = SingleValuedOp::Affine { matrix: m, offset };
        return FiniteSumOracle::new(vec![comp], prob.metric(), scheme);
    }
    let mut rows: Vec<usize> = (0..dim).collect();
    rows.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut comps = Vec::with_capacity(n_parts);
    for k in 0..n_parts {
        let lo = k * dim / n_parts;
        let hi = (k + 1) * dim / n_parts;
        let mut mk = Matrix::zeros(dim, dim);
        let mut ck = Vector::zeros(dim);
        for &r in &rows[lo..hi] {
            mk.set_row(r, &m.row(r));
            ck[r] = offset[r];
        }
        comps.push(SingleValuedOp::Affine { matrix: mk, offset: ck });
    }
    FiniteSumOracle::new(comps, prob.metric(), scheme)
}

/// Spectral norm of the covariance built from asset data.
pub fn covariance_norm(assets: &AssetData) -> f64 {
    estimate_opnorm(&assets.covariance())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn two_asset_text() -> &'static str {
        "2\n0.01 0.1\n0.02 0.2\n1 1 1.0\n1 2 0.5\n2 2 1.0\n"
    }

    #[test]
    fn qp_saddle_shape_and_constants() {
        let p = build_qp_saddle(4, 2, 1).unwrap();
        assert_eq!(p.dim(), 6);
        let data = QpSaddleData::generate(4, 2, 1).unwrap();
        assert_relative_eq!(p.mu(), estimate_opnorm(&data.d), max_relative = 1e-12);
        assert_relative_eq!(p.beta(), estimate_opnorm(&data.g).powi(2), max_relative = 1e-12);
        assert_eq!(data, QpSaddleData::generate(4, 2, 1).unwrap());
        assert!(build_qp_saddle(5, 2, 1).is_err());
        assert!(build_qp_saddle(4, 0, 1).is_err());
    }

    #[test]
    fn qp_saddle_b_is_skew() {
        let p = build_qp_saddle(10, 3, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let v = normal_vector(&mut rng, 13);
            assert!(p.b().eval(&v).unwrap().dot(&v).abs() <= 1e-9 * v.norm_squared());
        }
    }

    #[test]
    fn zero_constraint_matrix_has_zero_lipschitz() {
        let mut data = QpSaddleData::generate(4, 2, 3).unwrap();
        data.d.fill(0.0);
        let p = build_qp_saddle_from(data).unwrap();
        assert_eq!(p.mu(), 0.0);
        assert!(p.beta() > 0.0);
    }

    #[test]
    fn saddle_halves_add_up() {
        let p = build_qp_saddle(8, 3, 11).unwrap();
        let (b1, b2) = split_saddle_b(&p).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let v = normal_vector(&mut rng, 11);
            let sum = b1.eval(&v).unwrap() + b2.eval(&v).unwrap();
            assert!((sum - p.b().eval(&v).unwrap()).amax() <= 1e-15);
        }
        assert_relative_eq!(b1.lipschitz(p.metric()).unwrap(), p.mu() / 2.0, max_relative = 1e-12);
        let s = build_strong_synthetic(3, 1.0, 1).unwrap();
        assert!(split_saddle_b(&s).is_err());
    }

    #[test]
    fn parse_two_assets() {
        let a = parse_orlibrary(two_asset_text()).unwrap();
        let h = a.covariance();
        assert_relative_eq!(h, Matrix::from_row_slice(2, 2, &[0.01, 0.01, 0.01, 0.04]), epsilon = 1e-15);
        assert_eq!(a.means, vec![0.01, 0.02]);
    }

    #[test]
    fn parse_errors_name_lines() {
        let truncated = "2\n0.01 0.1\n0.02 0.2\n1 1 1.0\n1 2 0.5\n";
        match parse_orlibrary(truncated) {
            Err(SplitError::Parse { line, msg }) => {
                assert_eq!(line, 6);
                assert!(msg.contains("(2, 2)"), "{msg}");
            }
            other => panic!("{other:?}"),
        }
        let out_of_range = "2\n0.01 0.1\n0.02 0.2\n1 3 0.5\n";
        assert!(matches!(parse_orlibrary(out_of_range), Err(SplitError::Parse { line: 4, .. })));
        let bad_diag = "2\n0.01 0.1\n0.02 0.2\n1 1 0.9\n1 2 0.5\n2 2 1.0\n";
        assert!(matches!(parse_orlibrary(bad_diag), Err(SplitError::Parse { line: 4, .. })));
        let missing_asset = "3\n0.01 0.1\n";
        assert!(matches!(parse_orlibrary(missing_asset), Err(SplitError::Parse { line: 3, .. })));
        assert!(matches!(parse_orlibrary("x\n"), Err(SplitError::Parse { line: 1, .. })));
        // reversed pair order is accepted
        let reversed = "2\n0.01 0.1\n0.02 0.2\n1 1 1.0\n2 1 0.5\n2 2 1.0\n";
        assert_eq!(parse_orlibrary(reversed).unwrap(), parse_orlibrary(two_asset_text()).unwrap());
    }

    #[test]
    fn default_groups_partition() {
        assert_eq!(default_groups(225), vec![0..75, 75..150, 150..225]);
        assert_eq!(default_groups(7), vec![0..3, 3..5, 5..7]);
    }

    #[test]
    fn portfolio_layout() {
        let inst = PortfolioInstance::new(AssetData::synthetic(9, 3), 0.001);
        let p = build_portfolio(&inst).unwrap();
        assert_eq!(p.dim(), 9 + 4);
        match p.b() {
            SingleValuedOp::SkewSaddle { d, offset } => {
                assert_eq!(d.shape(), (4, 9));
                assert_eq!(offset.as_slice(), &[0.001, 0.3, 0.3, 0.3]);
                assert_eq!(d[(0, 2)], -inst.assets.means[2]);
                assert_eq!(d.row(2).iter().filter(|v| **v == -1.0).count(), 3);
            }
            other => panic!("{other:?}"),
        }
        // x = 1/n meets every group floor with equal thirds
        let g = portfolio_constraints(&p, &p.initial_point()).unwrap();
        for k in 1..4 {
            assert!(g[k] <= 0.0);
        }
        let mut bad = inst.clone();
        bad.groups = vec![0..4, 5..9];
        assert!(build_portfolio(&bad).is_err());
    }

    #[test]
    fn json_round_trip() {
        let inst = PortfolioInstance::new(AssetData::synthetic(6, 8), 0.002);
        let back = PortfolioInstance::from_json(&inst.to_json()).unwrap();
        assert_eq!(back, inst);
    }

    #[test]
    fn strong_synthetic_solution_checks() {
        let p = build_strong_synthetic(12, 0.5, 3).unwrap();
        let xs = p.known_solution().unwrap().clone();
        let q = build_strong_synthetic(12, 0.5, 3).unwrap();
        assert_eq!(q.known_solution().unwrap(), &xs);
        let f = p.b().eval(&xs).unwrap() + p.c().eval(&xs).unwrap();
        assert!(p.a().inclusion_residual(&xs, &f).unwrap() <= 1e-10);
        let id = build_strong_identity(1, 2.0).unwrap();
        assert_eq!(id.known_solution().unwrap()[0], 0.0);
    }

    #[test]
    fn finite_sum_synthetic_sums_to_b() {
        let inst = build_finite_sum_synthetic(8, 1.0, 4, 2, SamplingScheme::Uniform).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = normal_vector(&mut rng, 8);
        let diff = inst.oracle.full_eval(&v).unwrap() - inst.problem.b().eval(&v).unwrap();
        assert!(diff.amax() <= 1e-12);
        // ⟨Bv, v⟩ = ρ‖v‖²
        assert_relative_eq!(inst.problem.b().eval(&v).unwrap().dot(&v), v.norm_squared(), max_relative = 1e-10);
    }

    #[test]
    fn row_split_examples() {
        let p = build_qp_saddle(4, 2, 9).unwrap();
        let one = split_b_finite_sum(&p, 1, 0, SamplingScheme::Uniform).unwrap();
        assert_eq!(one.len(), 1);
        let three = split_b_finite_sum(&p, 3, 5, SamplingScheme::Importance).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..10 {
            let v = normal_vector(&mut rng, 6);
            assert!((three.full_eval(&v).unwrap() - p.b().eval(&v).unwrap()).amax() <= 1e-12);
            assert!((one.full_eval(&v).unwrap() - p.b().eval(&v).unwrap()).amax() <= 1e-12);
        }
        let uni = split_b_finite_sum(&p, 3, 5, SamplingScheme::Uniform).unwrap();
        assert!(uni.theta() >= p.mu() - 1e-12);
        assert!(split_b_finite_sum(&p, 0, 5, SamplingScheme::Uniform).is_err());
    }

    proptest! {
        #[test]
        fn orlibrary_round_trip(n in 1usize..8, seed in 0u64..1000) {
            let a = AssetData::synthetic(n, seed);
            let back = parse_orlibrary(&a.to_orlibrary()).unwrap();
            prop_assert_eq!(back, a);
        }

        #[test]
        fn covariance_is_psd(n in 1usize..10, seed in 0u64..1000) {
            let h = AssetData::synthetic(n, seed).covariance();
            let eig = SymmetricEigen::new(h);
            prop_assert!(eig.eigenvalues.min() >= -1e-10);
        }
    }
}
