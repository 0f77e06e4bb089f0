//! S-weighted geometry.
//!
//! Every norm the solvers report is measured through a [`Metric`]: a linear,
//! self-adjoint, strongly positive operator `S`. The induced pair of norms is
//! `‖x‖_S = √⟨Sx, x⟩` and `‖x‖_{S⁻¹} = √⟨S⁻¹x, x⟩`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{check_dim, invalid, Result, SplitError};

/// Dense real vector used throughout the crate.
pub type Vector = DVector<f64>;
/// Dense real matrix used throughout the crate.
pub type Matrix = DMatrix<f64>;

const SINGULAR_FLOOR: f64 = 1e-14;
const SYMMETRY_TOL: f64 = 1e-12;
const INVERSE_POWER_ITERS: usize = 50;

#[derive(Debug, Clone)]
pub enum MetricKind {
    Identity,
    Diagonal(Vector),
    DenseSymmetric(Matrix),
}

/// A strongly positive self-adjoint operator `S`.
///
/// Immutable after construction. Dense metrics carry their Cholesky factor.
#[derive(Debug, Clone)]
pub struct Metric {
    kind: MetricKind,
    dim: usize,
    modulus: f64,
    chol: Option<Cholesky<f64, Dyn>>,
}

impl Metric {
    pub fn identity(dim: usize) -> Self {
        Metric { kind: MetricKind::Identity, dim, modulus: 1.0, chol: None }
    }

    pub fn diagonal(weights: Vector) -> Result<Self> {
        if weights.is_empty() {
            return Err(invalid("diagonal metric needs at least one weight"));
        }
        if weights.iter().any(|w| !w.is_finite() || *w <= 0.0) {
            return Err(invalid("diagonal metric weights must be finite and positive"));
        }
        let modulus = weights.min();
        if modulus < SINGULAR_FLOOR {
            return Err(SplitError::SingularMetric(modulus));
        }
        Ok(Metric { dim: weights.len(), kind: MetricKind::Diagonal(weights), modulus, chol: None })
    }

    /// Dense symmetric metric; the strong-positivity modulus is estimated by
    /// inverse power iteration.
    pub fn dense(matrix: Matrix) -> Result<Self> {
        Self::dense_impl(matrix, None)
    }

    /// Dense symmetric metric with a caller-supplied modulus.
    pub fn dense_with_modulus(matrix: Matrix, modulus: f64) -> Result<Self> {
        Self::dense_impl(matrix, Some(modulus))
    }

    fn dense_impl(matrix: Matrix, modulus: Option<f64>) -> Result<Self> {
        let n = matrix.nrows();
        if n == 0 || matrix.ncols() != n {
            return Err(invalid("dense metric must be a non-empty square matrix"));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(invalid("dense metric has non-finite entries"));
        }
        let scale = matrix.amax().max(f64::MIN_POSITIVE);
        let asym = (&matrix - matrix.transpose()).amax() / scale;
        if asym > SYMMETRY_TOL {
            return Err(SplitError::NotSymmetric(asym));
        }
        let chol = Cholesky::new(matrix.clone()).ok_or(SplitError::SingularMetric(0.0))?;
        let modulus = match modulus {
            Some(m) => m,
            None => smallest_eigenvalue(&matrix, &chol),
        };
        if !(modulus >= SINGULAR_FLOOR) {
            return Err(SplitError::SingularMetric(modulus));
        }
        Ok(Metric { kind: MetricKind::DenseSymmetric(matrix), dim: n, modulus, chol: Some(chol) })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> &MetricKind {
        &self.kind
    }

    /// Strong-positivity modulus `m` with `⟨Sx, x⟩ ≥ m‖x‖²`.
    pub fn modulus(&self) -> f64 {
        self.modulus
    }

    pub fn is_identity(&self) -> bool {
        matches!(self.kind, MetricKind::Identity)
    }

    /// Per-coordinate weights when `S` is diagonal (all ones for the identity).
    pub fn diagonal_weights(&self) -> Option<Vector> {
        match &self.kind {
            MetricKind::Identity => Some(Vector::from_element(self.dim, 1.0)),
            MetricKind::Diagonal(w) => Some(w.clone()),
            MetricKind::DenseSymmetric(_) => None,
        }
    }

    /// `Sx`.
    pub fn apply(&self, x: &Vector) -> Result<Vector> {
        check_dim(self.dim, x.len())?;
        Ok(match &self.kind {
            MetricKind::Identity => x.clone(),
            MetricKind::Diagonal(w) => w.component_mul(x),
            MetricKind::DenseSymmetric(m) => m * x,
        })
    }

    /// `S⁻¹y`.
    pub fn solve(&self, y: &Vector) -> Result<Vector> {
        check_dim(self.dim, y.len())?;
        Ok(match &self.kind {
            MetricKind::Identity => y.clone(),
            MetricKind::Diagonal(w) => y.component_div(w),
            MetricKind::DenseSymmetric(_) => {
                let chol = self.chol.as_ref().expect("dense metric always carries its factor");
                chol.solve(y)
            }
        })
    }

    /// `⟨Sx, y⟩`.
    pub fn inner(&self, x: &Vector, y: &Vector) -> Result<f64> {
        check_dim(self.dim, y.len())?;
        Ok(self.apply(x)?.dot(y))
    }

    /// `‖x‖²_S`.
    pub fn norm_sq(&self, x: &Vector) -> Result<f64> {
        self.inner(x, x)
    }

    /// `‖x‖²_{S⁻¹}`.
    pub fn dual_norm_sq(&self, x: &Vector) -> Result<f64> {
        Ok(self.solve(x)?.dot(x))
    }

    /// `(‖x‖_S, ‖x‖_{S⁻¹})`.
    pub fn norms(&self, x: &Vector) -> Result<(f64, f64)> {
        let primal = self.norm_sq(x)?.max(0.0).sqrt();
        let dual = self.dual_norm_sq(x)?.max(0.0).sqrt();
        Ok((primal, dual))
    }

    /// `‖x‖_S`.
    pub fn norm(&self, x: &Vector) -> Result<f64> {
        Ok(self.norm_sq(x)?.max(0.0).sqrt())
    }

    /// `‖x‖_{S⁻¹}`.
    pub fn dual_norm(&self, x: &Vector) -> Result<f64> {
        Ok(self.dual_norm_sq(x)?.max(0.0).sqrt())
    }

    /// Returns `R⁻¹ M R⁻ᵀ` where `S = R Rᵀ`.
    ///
    /// Its spectral norm is the Lipschitz constant of `x ↦ Mx` measured from
    /// `‖·‖_S` to `‖·‖_{S⁻¹}`.
    pub fn congruence(&self, m: &Matrix) -> Result<Matrix> {
        check_dim(self.dim, m.nrows())?;
        check_dim(self.dim, m.ncols())?;
        Ok(match &self.kind {
            MetricKind::Identity => m.clone(),
            MetricKind::Diagonal(w) => {
                let s = w.map(|v| 1.0 / v.sqrt());
                let mut out = m.clone();
                for j in 0..self.dim {
                    for i in 0..self.dim {
                        out[(i, j)] *= s[i] * s[j];
                    }
                }
                out
            }
            MetricKind::DenseSymmetric(_) => {
                let l = self.chol.as_ref().expect("dense metric always carries its factor").l();
                let left = l.solve_lower_triangular(m).ok_or(SplitError::SingularMetric(self.modulus))?;
                let right =
                    l.solve_lower_triangular(&left.transpose()).ok_or(SplitError::SingularMetric(self.modulus))?;
                right.transpose()
            }
        })
    }
}

fn smallest_eigenvalue(matrix: &Matrix, chol: &Cholesky<f64, Dyn>) -> f64 {
    let n = matrix.nrows();
    let mut v = Vector::from_element(n, 1.0 / (n as f64).sqrt());
    let mut estimate = f64::INFINITY;
    for _ in 0..INVERSE_POWER_ITERS {
        let w = chol.solve(&v);
        let norm = w.norm();
        if !(norm.is_finite() && norm > 0.0) {
            return 0.0;
        }
        v = w / norm;
        estimate = v.dot(&(matrix * &v));
    }
    estimate
}
