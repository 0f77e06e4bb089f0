//! Concrete operators for the experiment families.
//!
//! Set-valued operators are only ever touched through their resolvents;
//! single-valued operators through explicit evaluation. Lipschitz and
//! cocoercivity constants are always derived numerically from the operator's
//! matrix data, never entered by hand.

use crate::error::{check_dim, invalid, Result};
use crate::metric::{Matrix, Metric, Vector};

const OPNORM_REL_TOL: f64 = 1e-10;
const OPNORM_MAX_ITERS: usize = 10_000;
const BISECTION_WIDTH: f64 = 1e-14;
const BISECTION_MAX_STEPS: usize = 400;

/// Largest singular value of `matrix` by power iteration on `MᵀM`.
///
/// Deterministic: the iteration starts from the all-ones vector (falling back
/// to an alternating ramp if that lies in the null space of `MᵀM`).
pub fn estimate_opnorm(matrix: &Matrix) -> f64 {
    if matrix.is_empty() || matrix.amax() == 0.0 {
        return 0.0;
    }
    let n = matrix.ncols();
    let starts = [
        Vector::from_element(n, 1.0),
        Vector::from_fn(n, |i, _| if i % 2 == 0 { 1.0 + i as f64 } else { -(1.0 + i as f64) }),
        Vector::from_fn(n, |i, _| ((i * 7919 % 101) as f64) - 50.0 + 0.5),
    ];
    for start in starts {
        if let Some(sigma) = power_iterate(matrix, start) {
            return sigma;
        }
    }
    // Every start is annihilated; fall back to the exact SVD.
    matrix.clone().singular_values().max()
}

fn power_iterate(matrix: &Matrix, start: Vector) -> Option<f64> {
    let mut v = start.normalize();
    let mut lambda = 0.0f64;
    for _ in 0..OPNORM_MAX_ITERS {
        let mv = matrix * &v;
        let w = matrix.tr_mul(&mv);
        let next = mv.norm_squared();
        let wn = w.norm();
        if wn == 0.0 || !wn.is_finite() {
            return if lambda > 0.0 { Some(lambda.sqrt()) } else { None };
        }
        v = w / wn;
        let done = next > 0.0 && ((next - lambda).abs() / next) < OPNORM_REL_TOL;
        lambda = next;
        if done {
            break;
        }
    }
    Some(lambda.sqrt())
}

/// Euclidean projection onto `{y : Σyᵢ = 1, 0 ≤ yᵢ ≤ 1}`.
pub fn project_capped_simplex(z: &Vector) -> Result<Vector> {
    let ones = Vector::from_element(z.len(), 1.0);
    project_capped_simplex_weighted(z, &ones)
}

/// Projection onto the capped simplex in the norm `Σ cᵢ yᵢ²`.
///
/// The solution is `yᵢ = clip(zᵢ − τ/cᵢ, 0, 1)` for the scalar `τ` solving
/// `Σ clip(zᵢ − τ/cᵢ, 0, 1) = 1`, found by bisection and then polished from
/// the identified active set.
pub fn project_capped_simplex_weighted(z: &Vector, weights: &Vector) -> Result<Vector> {
    if z.is_empty() {
        return Err(invalid("capped simplex projection needs dimension >= 1"));
    }
    check_dim(z.len(), weights.len())?;
    let eval = |tau: f64| -> Vector { Vector::from_fn(z.len(), |i, _| (z[i] - tau / weights[i]).clamp(0.0, 1.0)) };
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..z.len() {
        lo = lo.min(weights[i] * (z[i] - 1.0));
        hi = hi.max(weights[i] * z[i]);
    }
    // Σ clip(z − τ/c) is nonincreasing in τ: n at `lo`, 0 at `hi`.
    for _ in 0..BISECTION_MAX_STEPS {
        if hi - lo <= BISECTION_WIDTH {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if eval(mid).sum() >= 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let tau = 0.5 * (lo + hi);
    let rough = eval(tau);

    // Polish: solve for τ exactly on the free set.
    let mut free_num = 0.0;
    let mut free_den = 0.0;
    let mut upper = 0.0;
    for i in 0..z.len() {
        if rough[i] >= 1.0 {
            upper += 1.0;
        } else if rough[i] > 0.0 {
            free_num += z[i];
            free_den += 1.0 / weights[i];
        }
    }
    if free_den > 0.0 {
        let exact = (free_num + upper - 1.0) / free_den;
        let polished = eval(exact);
        if (polished.sum() - 1.0).abs() <= (rough.sum() - 1.0).abs() {
            return Ok(polished);
        }
    }
    Ok(rough)
}

/// A maximally monotone operator handled through its resolvent.
#[derive(Debug, Clone)]
pub enum SetValuedOp {
    Zero {
        dim: usize,
    },
    /// Normal cone of the box `[lo, hi]`.
    BoxNormalCone {
        lo: Vector,
        hi: Vector,
    },
    NonnegOrthantNormalCone {
        dim: usize,
    },
    /// Normal cone of `{Σxᵢ = 1, 0 ≤ xᵢ ≤ 1}`.
    CappedSimplexNormalCone {
        dim: usize,
    },
    /// `ρ·Id + inner`, strongly monotone with modulus `ρ`.
    StronglyMonotone {
        inner: Box<SetValuedOp>,
        rho: f64,
    },
    /// Block-diagonal product over consecutive coordinate blocks.
    Product(Vec<SetValuedOp>),
}

impl SetValuedOp {
    pub fn unit_box(dim: usize) -> Self {
        SetValuedOp::BoxNormalCone { lo: Vector::zeros(dim), hi: Vector::from_element(dim, 1.0) }
    }

    pub fn dim(&self) -> usize {
        match self {
            SetValuedOp::Zero { dim }
            | SetValuedOp::NonnegOrthantNormalCone { dim }
            | SetValuedOp::CappedSimplexNormalCone { dim } => *dim,
            SetValuedOp::BoxNormalCone { lo, .. } => lo.len(),
            SetValuedOp::StronglyMonotone { inner, .. } => inner.dim(),
            SetValuedOp::Product(blocks) => blocks.iter().map(SetValuedOp::dim).sum(),
        }
    }

    /// `J_{γA}(z) = (Id + γA)⁻¹ z`.
    ///
    /// For the normal-cone kinds this is the Euclidean projection onto the
    /// underlying set and `gamma` has no effect.
    pub fn resolvent(&self, gamma: f64, z: &Vector) -> Result<Vector> {
        if !(gamma > 0.0) {
            return Err(invalid("resolvent step must be positive"));
        }
        check_dim(self.dim(), z.len())?;
        if self.is_conic() {
            return self.solve_inclusion(&Vector::from_element(z.len(), 1.0), z);
        }
        let coeff = Vector::from_element(z.len(), 1.0 / gamma);
        self.solve_inclusion(&coeff, &(z / gamma))
    }

    /// True when `γA = A` for every `γ > 0`.
    fn is_conic(&self) -> bool {
        match self {
            SetValuedOp::StronglyMonotone { .. } => false,
            SetValuedOp::Product(blocks) => blocks.iter().all(SetValuedOp::is_conic),
            _ => true,
        }
    }

    /// Finds the unique `y` with `c ∘ y + a = z` for some `a ∈ A(y)`, where
    /// `c` is a positive per-coordinate coefficient vector.
    pub fn solve_inclusion(&self, coeff: &Vector, z: &Vector) -> Result<Vector> {
        check_dim(self.dim(), z.len())?;
        check_dim(self.dim(), coeff.len())?;
        match self {
            SetValuedOp::Zero { .. } => Ok(z.component_div(coeff)),
            SetValuedOp::BoxNormalCone { lo, hi } => {
                Ok(Vector::from_fn(z.len(), |i, _| (z[i] / coeff[i]).clamp(lo[i], hi[i])))
            }
            SetValuedOp::NonnegOrthantNormalCone { .. } => {
                Ok(Vector::from_fn(z.len(), |i, _| (z[i] / coeff[i]).max(0.0)))
            }
            SetValuedOp::CappedSimplexNormalCone { .. } => {
                project_capped_simplex_weighted(&z.component_div(coeff), coeff)
            }
            SetValuedOp::StronglyMonotone { inner, rho } => inner.solve_inclusion(&coeff.add_scalar(*rho), z),
            SetValuedOp::Product(blocks) => {
                let mut out = Vector::zeros(z.len());
                let mut start = 0;
                for block in blocks {
                    let d = block.dim();
                    let part =
                        block.solve_inclusion(&coeff.rows(start, d).into_owned(), &z.rows(start, d).into_owned())?;
                    out.rows_mut(start, d).copy_from(&part);
                    start += d;
                }
                Ok(out)
            }
        }
    }

    /// Strong-monotonicity modulus (Euclidean), zero for pure normal cones.
    pub fn strong_monotonicity(&self) -> f64 {
        match self {
            SetValuedOp::StronglyMonotone { inner, rho } => rho + inner.strong_monotonicity(),
            SetValuedOp::Product(blocks) => {
                blocks.iter().map(SetValuedOp::strong_monotonicity).fold(f64::INFINITY, f64::min)
            }
            _ => 0.0,
        }
    }

    /// Distance-style residual of `0 ∈ A(x) + w`: `‖x − J_A(x − w)‖`.
    pub fn inclusion_residual(&self, x: &Vector, w: &Vector) -> Result<f64> {
        let y = self.resolvent(1.0, &(x - w))?;
        Ok((x - y).norm())
    }
}

/// A single-valued Lipschitz operator evaluated explicitly.
#[derive(Debug, Clone)]
pub enum SingleValuedOp {
    Zero {
        dim: usize,
    },
    /// `v ↦ Mv + c`.
    Affine {
        matrix: Matrix,
        offset: Vector,
    },
    /// `(x, u) ↦ (Dᵀu, −Dx − b)` with `D` of shape `q × N`.
    SkewSaddle {
        d: Matrix,
        offset: Vector,
    },
    /// `(x, u) ↦ (Gᵀ(Gx − b), 0)`; the zero block has length `tail`.
    LeastSquaresGradient {
        g: Matrix,
        b: Vector,
        tail: usize,
    },
    /// `(x, u) ↦ (Hx − c, 0)` for symmetric positive semidefinite `H`.
    QuadraticGradient {
        h: Matrix,
        c: Vector,
        tail: usize,
    },
    Scaled {
        inner: Box<SingleValuedOp>,
        factor: f64,
    },
}

impl SingleValuedOp {
    pub fn dim(&self) -> usize {
        match self {
            SingleValuedOp::Zero { dim } => *dim,
            SingleValuedOp::Affine { matrix, .. } => matrix.ncols(),
            SingleValuedOp::SkewSaddle { d, .. } => d.nrows() + d.ncols(),
            SingleValuedOp::LeastSquaresGradient { g, tail, .. } => g.ncols() + tail,
            SingleValuedOp::QuadraticGradient { h, tail, .. } => h.ncols() + tail,
            SingleValuedOp::Scaled { inner, .. } => inner.dim(),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            SingleValuedOp::Zero { .. } => true,
            SingleValuedOp::Scaled { inner, factor } => *factor == 0.0 || inner.is_zero(),
            _ => false,
        }
    }

    pub fn eval(&self, v: &Vector) -> Result<Vector> {
        check_dim(self.dim(), v.len())?;
        Ok(self.eval_unchecked(v))
    }

    fn eval_unchecked(&self, v: &Vector) -> Vector {
        match self {
            SingleValuedOp::Zero { dim } => Vector::zeros(*dim),
            SingleValuedOp::Affine { matrix, offset } => matrix * v + offset,
            SingleValuedOp::SkewSaddle { d, offset } => {
                let (q, n) = d.shape();
                let x = v.rows(0, n);
                let u = v.rows(n, q);
                let mut out = Vector::zeros(n + q);
                out.rows_mut(0, n).copy_from(&d.tr_mul(&u));
                let dual = -(d * x) - offset;
                out.rows_mut(n, q).copy_from(&dual);
                out
            }
            SingleValuedOp::LeastSquaresGradient { g, b, tail } => {
                let n = g.ncols();
                let r = g * v.rows(0, n) - b;
                let mut out = Vector::zeros(n + tail);
                out.rows_mut(0, n).copy_from(&g.tr_mul(&r));
                out
            }
            SingleValuedOp::QuadraticGradient { h, c, tail } => {
                let n = h.ncols();
                let mut out = Vector::zeros(n + tail);
                out.rows_mut(0, n).copy_from(&(h * v.rows(0, n) - c));
                out
            }
            SingleValuedOp::Scaled { inner, factor } => inner.eval_unchecked(v) * *factor,
        }
    }

    /// Dense matrix of the linear part (the operator minus its value at 0).
    pub fn linear_part(&self) -> Matrix {
        let n = self.dim();
        match self {
            SingleValuedOp::Zero { dim } => Matrix::zeros(*dim, *dim),
            SingleValuedOp::Affine { matrix, .. } => matrix.clone(),
            SingleValuedOp::SkewSaddle { d, .. } => {
                let (q, p) = d.shape();
                let mut m = Matrix::zeros(n, n);
                m.view_mut((0, p), (p, q)).copy_from(&d.transpose());
                m.view_mut((p, 0), (q, p)).copy_from(&(-d));
                m
            }
            SingleValuedOp::LeastSquaresGradient { g, .. } => {
                let p = g.ncols();
                let mut m = Matrix::zeros(n, n);
                m.view_mut((0, 0), (p, p)).copy_from(&g.tr_mul(g));
                m
            }
            SingleValuedOp::QuadraticGradient { h, .. } => {
                let p = h.ncols();
                let mut m = Matrix::zeros(n, n);
                m.view_mut((0, 0), (p, p)).copy_from(h);
                m
            }
            SingleValuedOp::Scaled { inner, factor } => inner.linear_part() * *factor,
        }
    }

    /// Value at the origin.
    pub fn offset(&self) -> Vector {
        self.eval_unchecked(&Vector::zeros(self.dim()))
    }

    /// Lipschitz constant from `‖·‖_S` to `‖·‖_{S⁻¹}`.
    pub fn lipschitz(&self, metric: &Metric) -> Result<f64> {
        check_dim(self.dim(), metric.dim())?;
        if metric.is_identity() {
            return Ok(self.euclidean_lipschitz());
        }
        Ok(estimate_opnorm(&metric.congruence(&self.linear_part())?))
    }

    fn euclidean_lipschitz(&self) -> f64 {
        match self {
            SingleValuedOp::Zero { .. } => 0.0,
            SingleValuedOp::Affine { matrix, .. } => estimate_opnorm(matrix),
            SingleValuedOp::SkewSaddle { d, .. } => estimate_opnorm(d),
            SingleValuedOp::LeastSquaresGradient { g, .. } => estimate_opnorm(g).powi(2),
            SingleValuedOp::QuadraticGradient { h, .. } => estimate_opnorm(h),
            SingleValuedOp::Scaled { inner, factor } => factor.abs() * inner.euclidean_lipschitz(),
        }
    }

    /// `β` such that the operator is `β⁻¹`-cocoercive w.r.t. `S`, when the
    /// operator is known to be the gradient of a convex quadratic.
    pub fn cocoercivity(&self, metric: &Metric) -> Result<Option<f64>> {
        check_dim(self.dim(), metric.dim())?;
        Ok(match self {
            SingleValuedOp::Zero { .. } => Some(0.0),
            SingleValuedOp::LeastSquaresGradient { .. } | SingleValuedOp::QuadraticGradient { .. } => {
                Some(self.lipschitz(metric)?)
            }
            SingleValuedOp::Scaled { inner, factor } if *factor >= 0.0 => {
                inner.cocoercivity(metric)?.map(|b| b * factor)
            }
            _ => None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_row_slice(xs)
    }

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vector {
        Vector::from_fn(n, |_, _| rng.random_range(-scale..scale))
    }

    /// Brute-force capped-simplex projection: enumerate every assignment of
    /// coordinates to {0, 1, free}, solve the equality-constrained problem on
    /// the free set, and keep the closest feasible point.
    fn capped_simplex_oracle(z: &Vector) -> Vector {
        let n = z.len();
        let mut best: Option<(f64, Vector)> = None;
        for code in 0..3usize.pow(n as u32) {
            let mut c = code;
            let mut state = vec![0u8; n];
            for s in state.iter_mut() {
                *s = (c % 3) as u8;
                c /= 3;
            }
            let free: Vec<usize> = (0..n).filter(|&i| state[i] == 2).collect();
            let ones = state.iter().filter(|&&s| s == 1).count() as f64;
            let mut y = Vector::from_fn(n, |i, _| if state[i] == 1 { 1.0 } else { 0.0 });
            if free.is_empty() {
                if (ones - 1.0).abs() > 1e-12 {
                    continue;
                }
            } else {
                let shift = (free.iter().map(|&i| z[i]).sum::<f64>() + ones - 1.0) / free.len() as f64;
                for &i in &free {
                    y[i] = z[i] - shift;
                }
            }
            if y.iter().any(|&t| !(-1e-12..=1.0 + 1e-12).contains(&t)) || (y.sum() - 1.0).abs() > 1e-9 {
                continue;
            }
            let d = (&y - z).norm_squared();
            if best.as_ref().is_none_or(|(bd, _)| d < *bd) {
                best = Some((d, y));
            }
        }
        best.expect("capped simplex is nonempty").1
    }

    #[test]
    fn resolvent_examples() {
        let b = SetValuedOp::unit_box(3);
        assert_eq!(b.resolvent(0.7, &v(&[-0.5, 0.3, 1.7])).unwrap(), v(&[0.0, 0.3, 1.0]));
        let o = SetValuedOp::NonnegOrthantNormalCone { dim: 2 };
        assert_eq!(o.resolvent(3.0, &v(&[-1.0, 2.0])).unwrap(), v(&[0.0, 2.0]));
        let z = SetValuedOp::Zero { dim: 2 };
        assert_eq!(z.resolvent(5.0, &v(&[1.5, -2.0])).unwrap(), v(&[1.5, -2.0]));
    }

    #[test]
    fn resolvent_errors() {
        let b = SetValuedOp::unit_box(3);
        assert!(b.resolvent(1.0, &v(&[1.0])).is_err());
        assert!(b.resolvent(0.0, &v(&[1.0, 1.0, 1.0])).is_err());
    }

    #[test]
    fn strongly_monotone_resolvent_scales() {
        let a = SetValuedOp::StronglyMonotone { inner: Box::new(SetValuedOp::unit_box(2)), rho: 1.0 };
        // (Id + γ(ρ Id + N))⁻¹ z = P(z / (1 + γρ))
        let y = a.resolvent(0.5, &v(&[1.2, -3.0])).unwrap();
        assert_relative_eq!(y[0], 0.8, epsilon = 1e-15);
        assert_eq!(y[1], 0.0);
        assert_eq!(a.strong_monotonicity(), 1.0);
    }

    #[test]
    fn product_resolvent_splits_blocks() {
        let a = SetValuedOp::Product(vec![
            SetValuedOp::CappedSimplexNormalCone { dim: 2 },
            SetValuedOp::NonnegOrthantNormalCone { dim: 2 },
        ]);
        let y = a.resolvent(1.0, &v(&[0.9, 0.9, -1.0, 4.0])).unwrap();
        assert!((y - v(&[0.5, 0.5, 0.0, 4.0])).amax() < 1e-14);
    }

    #[test]
    fn capped_simplex_examples() {
        let y = project_capped_simplex(&v(&[0.2, 0.3, 0.5])).unwrap();
        assert!((y - v(&[0.2, 0.3, 0.5])).amax() < 1e-14);
        let y = project_capped_simplex(&v(&[0.9, 0.9])).unwrap();
        assert!((y - v(&[0.5, 0.5])).amax() < 1e-14);
        let y = project_capped_simplex(&v(&[2.0, -1.0])).unwrap();
        assert_eq!(y, capped_simplex_oracle(&v(&[2.0, -1.0])));
        assert_eq!(y, v(&[1.0, 0.0]));
        assert!(project_capped_simplex(&Vector::zeros(0)).is_err());
    }

    #[test]
    fn capped_simplex_matches_active_set_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..600 {
            let n = 2 + trial % 3;
            let z = rand_vec(&mut rng, n, 2.0);
            let y = project_capped_simplex(&z).unwrap();
            assert!((y.sum() - 1.0).abs() <= 1e-10);
            assert!(y.iter().all(|&t| (0.0..=1.0).contains(&t)));
            let oracle = capped_simplex_oracle(&z);
            assert!((&y - &oracle).amax() <= 1e-8, "z={z} y={y} oracle={oracle}");
        }
    }

    #[test]
    fn capped_simplex_large_scale_inputs() {
        let z = v(&[1e6, -3e5, 2e6, 7.0]);
        let y = project_capped_simplex(&z).unwrap();
        assert!((y.sum() - 1.0).abs() <= 1e-10);
        assert_eq!(y[2], 1.0);
    }

    #[test]
    fn weighted_capped_simplex_satisfies_kkt() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let z = rand_vec(&mut rng, 5, 2.0);
            let w = Vector::from_fn(5, |_, _| rng.random_range(0.2..4.0));
            let y = project_capped_simplex_weighted(&z, &w).unwrap();
            assert!((y.sum() - 1.0).abs() <= 1e-10);
            // Variational inequality: ⟨W(z − y), e_j − y⟩ ≤ 0 for all vertices e_j.
            let g = (&z - &y).component_mul(&w);
            for j in 0..5 {
                let mut e = Vector::zeros(5);
                e[j] = 1.0;
                assert!(g.dot(&(e - &y)) <= 1e-9);
            }
        }
    }

    #[test]
    fn projections_are_firmly_nonexpansive() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ops = [
            SetValuedOp::unit_box(4),
            SetValuedOp::NonnegOrthantNormalCone { dim: 4 },
            SetValuedOp::CappedSimplexNormalCone { dim: 4 },
        ];
        for op in &ops {
            for _ in 0..1000 {
                let z1 = rand_vec(&mut rng, 4, 3.0);
                let z2 = rand_vec(&mut rng, 4, 3.0);
                let p1 = op.resolvent(1.0, &z1).unwrap();
                let p2 = op.resolvent(1.0, &z2).unwrap();
                let dp = &p1 - &p2;
                assert!(dp.norm_squared() <= dp.dot(&(&z1 - &z2)) + 1e-10);
            }
        }
    }

    #[test]
    fn eval_examples() {
        let skew = SingleValuedOp::SkewSaddle { d: Matrix::from_row_slice(1, 2, &[1.0, 0.0]), offset: v(&[0.0]) };
        assert_eq!(skew.eval(&v(&[1.0, 2.0, 3.0])).unwrap(), v(&[3.0, 0.0, -1.0]));
        let ls = SingleValuedOp::LeastSquaresGradient { g: Matrix::identity(2, 2), b: v(&[1.0, 1.0]), tail: 0 };
        assert_eq!(ls.eval(&v(&[1.0, 1.0])).unwrap(), v(&[0.0, 0.0]));
        let z = SingleValuedOp::Zero { dim: 3 };
        assert_eq!(z.eval(&v(&[1.0, 2.0, 3.0])).unwrap(), Vector::zeros(3));
        let s = SingleValuedOp::Scaled { inner: Box::new(skew.clone()), factor: 0.5 };
        assert_eq!(s.eval(&v(&[1.0, 2.0, 3.0])).unwrap(), v(&[1.5, 0.0, -0.5]));
        assert!(skew.eval(&v(&[1.0])).is_err());
    }

    #[test]
    fn linear_part_reproduces_eval() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let d = Matrix::from_fn(2, 3, |_, _| rng.random_range(-1.0..1.0));
        let ops = [
            SingleValuedOp::SkewSaddle { d: d.clone(), offset: v(&[0.3, -0.2]) },
            SingleValuedOp::LeastSquaresGradient { g: d.clone(), b: v(&[1.0, 2.0]), tail: 2 },
            SingleValuedOp::Scaled {
                inner: Box::new(SingleValuedOp::SkewSaddle { d, offset: v(&[0.0, 0.0]) }),
                factor: -2.0,
            },
        ];
        for op in &ops {
            let x = rand_vec(&mut rng, 5, 1.0);
            let direct = op.eval(&x).unwrap();
            let via_matrix = op.linear_part() * &x + op.offset();
            assert!((direct - via_matrix).amax() < 1e-14);
        }
    }

    #[test]
    fn opnorm_examples() {
        assert_relative_eq!(estimate_opnorm(&Matrix::identity(2, 2)), 1.0, epsilon = 1e-12);
        assert_relative_eq!(estimate_opnorm(&Matrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 1.0])), 3.0, epsilon = 1e-9);
        assert_relative_eq!(
            estimate_opnorm(&Matrix::from_row_slice(2, 2, &[0.0, 2.0, 0.0, 0.0])),
            2.0,
            epsilon = 1e-12
        );
        assert_eq!(estimate_opnorm(&Matrix::zeros(3, 2)), 0.0);
        // all-ones start is in the null space here
        assert_relative_eq!(estimate_opnorm(&Matrix::from_row_slice(1, 2, &[1.0, -1.0])), 2f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn opnorm_matches_svd() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let m = Matrix::from_fn(7, 5, |_, _| rng.random_range(-1.0..1.0));
            let exact = m.clone().singular_values().max();
            assert_relative_eq!(estimate_opnorm(&m), exact, max_relative = 1e-6);
        }
    }

    #[test]
    fn skew_saddle_is_skew_and_lipschitz() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let d = Matrix::from_fn(3, 5, |_, _| rng.random_range(-1.0..1.0));
        let op = SingleValuedOp::SkewSaddle { d, offset: Vector::zeros(3) };
        let metric = Metric::identity(8);
        let l = op.lipschitz(&metric).unwrap();
        for _ in 0..1000 {
            let x = rand_vec(&mut rng, 8, 5.0);
            let y = rand_vec(&mut rng, 8, 5.0);
            let bx = op.eval(&x).unwrap();
            assert!(bx.dot(&x).abs() <= 1e-9 * x.norm_squared());
            let by = op.eval(&y).unwrap();
            assert!((bx - by).norm() <= l * (&x - &y).norm() * (1.0 + 1e-9) + 1e-9);
        }
    }

    #[test]
    fn lipschitz_in_diagonal_metric() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let m = Matrix::from_fn(4, 4, |_, _| rng.random_range(-1.0..1.0));
        let op = SingleValuedOp::Affine { matrix: m, offset: Vector::zeros(4) };
        let metric = Metric::diagonal(v(&[0.5, 1.0, 2.0, 4.0])).unwrap();
        let l = op.lipschitz(&metric).unwrap();
        for _ in 0..1000 {
            let x = rand_vec(&mut rng, 4, 2.0);
            let y = rand_vec(&mut rng, 4, 2.0);
            let lhs = metric.dual_norm(&(op.eval(&x).unwrap() - op.eval(&y).unwrap())).unwrap();
            assert!(lhs <= l * metric.norm(&(&x - &y)).unwrap() + 1e-9);
        }
    }

    #[test]
    fn least_squares_gradient_is_cocoercive() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let g = Matrix::from_fn(3, 6, |_, _| rng.random_range(-1.0..1.0));
        let b = rand_vec(&mut rng, 3, 1.0);
        let op = SingleValuedOp::LeastSquaresGradient { g: g.clone(), b, tail: 0 };
        let metric = Metric::identity(6);
        let beta = op.cocoercivity(&metric).unwrap().unwrap();
        assert_relative_eq!(beta, estimate_opnorm(&g).powi(2), max_relative = 1e-12);
        for _ in 0..1000 {
            let x = rand_vec(&mut rng, 6, 3.0);
            let y = rand_vec(&mut rng, 6, 3.0);
            let z = rand_vec(&mut rng, 6, 3.0);
            let dc = op.eval(&x).unwrap() - op.eval(&y).unwrap();
            assert!(dc.dot(&(&x - &y)) >= dc.norm_squared() / beta - 1e-9);
            // ⟨Cx − Cy, z − y⟩ ≥ −(β/4)‖z − x‖²
            assert!(dc.dot(&(&z - &y)) >= -(beta / 4.0) * (&z - &x).norm_squared() - 1e-9);
        }
    }

    #[test]
    fn skew_operator_has_no_cocoercivity() {
        let op = SingleValuedOp::SkewSaddle { d: Matrix::identity(1, 1), offset: v(&[0.0]) };
        assert_eq!(op.cocoercivity(&Metric::identity(2)).unwrap(), None);
    }
}
