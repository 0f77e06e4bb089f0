//! Nonlinear kernels `M` with closed-form warped resolvents `(M + A)⁻¹`.
//!
//! Two families are provided:
//!
//! * `ScaledMetric`: `M = S/γ`. Then `γM − S = 0`, the momentum term vanishes
//!   identically and `L = 0`.
//! * `Shifted`: `M = S/γ − A₂` for a single-valued Lipschitz `A₂` taken out of
//!   a decomposition `A = A₁ + A₂`. Then `γM − S = −γA₂` and
//!   `L = γ·Lip_S(A₂)`. Because `M + A₁ + A₂ = S/γ + A₁`, the warped resolvent
//!   reduces to the scaled resolvent of `A₁`.

use crate::error::{check_dim, invalid, Result, SplitError};
use crate::metric::{Metric, MetricKind, Vector};
use crate::operators::{SetValuedOp, SingleValuedOp};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelKind {
    ScaledMetric,
    Shifted,
}

#[derive(Debug, Clone)]
pub struct KernelSpec {
    kind: KernelKind,
    a2: Option<SingleValuedOp>,
    a2_lipschitz: f64,
}

impl KernelSpec {
    pub fn scaled_metric() -> Self {
        KernelSpec { kind: KernelKind::ScaledMetric, a2: None, a2_lipschitz: 0.0 }
    }

    /// `M = S/γ − A₂`. Fails when no decomposition `A = A₁ + A₂` is available.
    pub fn shifted(a2: Option<&SingleValuedOp>, metric: &Metric) -> Result<Self> {
        let a2 = a2.ok_or(SplitError::MissingDecomposition)?;
        let a2_lipschitz = a2.lipschitz(metric)?;
        Ok(KernelSpec { kind: KernelKind::Shifted, a2: Some(a2.clone()), a2_lipschitz })
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    pub fn a2(&self) -> Option<&SingleValuedOp> {
        self.a2.as_ref()
    }

    /// `L` such that `γM − S` is `L`-Lipschitz w.r.t. `S`.
    pub fn momentum_lipschitz(&self, gamma: f64) -> f64 {
        match self.kind {
            KernelKind::ScaledMetric => 0.0,
            KernelKind::Shifted => gamma * self.a2_lipschitz,
        }
    }

    /// `M(x)`.
    pub fn apply(&self, gamma: f64, metric: &Metric, x: &Vector) -> Result<Vector> {
        Ok(self.apply_cached(gamma, metric, x)?.0)
    }

    /// `M(x)` together with `A₂(x)`, so the momentum update can reuse it.
    pub fn apply_cached(&self, gamma: f64, metric: &Metric, x: &Vector) -> Result<(Vector, Option<Vector>)> {
        let mut out = metric.apply(x)? / gamma;
        let a2x = match &self.a2 {
            Some(a2) => {
                let v = a2.eval(x)?;
                out -= &v;
                Some(v)
            }
            None => None,
        };
        Ok((out, a2x))
    }
}

/// Returns the unique `y` with `M(y) + a = z` for some `a ∈ A_total(y)`.
///
/// For the shifted kernel `a_op` must be `A₁`; `A₂` lives inside the kernel.
/// Non-diagonal metrics are supported only when `a_op` is the zero operator,
/// since a projection in a dense metric has no closed form here.
pub fn warped_resolvent(
    kernel: &KernelSpec,
    a_op: &SetValuedOp,
    gamma: f64,
    metric: &Metric,
    z: &Vector,
) -> Result<Vector> {
    if !(gamma > 0.0) {
        return Err(invalid("step size must be positive"));
    }
    if kernel.kind == KernelKind::Shifted && kernel.a2.is_none() {
        return Err(SplitError::MissingDecomposition);
    }
    check_dim(a_op.dim(), z.len())?;
    check_dim(metric.dim(), z.len())?;
    match metric.kind() {
        MetricKind::DenseSymmetric(_) => match a_op {
            SetValuedOp::Zero { .. } => Ok(metric.solve(z)? * gamma),
            _ => Err(SplitError::Unsupported(
                "warped resolvent of a set-valued operator in a non-diagonal metric".into(),
            )),
        },
        _ => {
            let weights = metric.diagonal_weights().expect("identity and diagonal metrics have weights");
            a_op.solve_inclusion(&(weights / gamma), z)
        }
    }
}

/// `(γM − S)y − (γM − S)x`.
pub fn momentum_update(kernel: &KernelSpec, gamma: f64, metric: &Metric, y: &Vector, x: &Vector) -> Result<Vector> {
    check_dim(metric.dim(), y.len())?;
    check_dim(metric.dim(), x.len())?;
    match (&kernel.kind, &kernel.a2) {
        (KernelKind::ScaledMetric, _) => Ok(Vector::zeros(y.len())),
        (KernelKind::Shifted, Some(a2)) => Ok((a2.eval(y)? - a2.eval(x)?) * (-gamma)),
        (KernelKind::Shifted, None) => Err(SplitError::MissingDecomposition),
    }
}

/// [`momentum_update`] with `A₂(x)` already evaluated by [`KernelSpec::apply_cached`].
pub fn momentum_update_cached(kernel: &KernelSpec, gamma: f64, y: &Vector, a2x: Option<&Vector>) -> Result<Vector> {
    match (&kernel.kind, &kernel.a2, a2x) {
        (KernelKind::ScaledMetric, _, _) => Ok(Vector::zeros(y.len())),
        (KernelKind::Shifted, Some(a2), Some(a2x)) => {
            check_dim(y.len(), a2x.len())?;
            Ok((a2.eval(y)? - a2x) * (-gamma))
        }
        (KernelKind::Shifted, Some(_), None) => Err(invalid("shifted momentum needs A2(x)")),
        (KernelKind::Shifted, None, _) => Err(SplitError::MissingDecomposition),
    }
}
