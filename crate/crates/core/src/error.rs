use thiserror::Error;

use crate::diagnostics::TraceRecord;

/// Errors raised by the solver library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum SplitError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("metric is not symmetric (relative asymmetry {0:.3e})")]
    NotSymmetric(f64),

    #[error("metric is numerically singular (modulus {0:.3e})")]
    SingularMetric(f64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unsupported combination: {0}")]
    Unsupported(String),

    #[error("shifted kernel requires the set-valued operator to be decomposed as A1 + A2")]
    MissingDecomposition,

    #[error("index {index} out of range for {len} components")]
    IndexOutOfRange { index: usize, len: usize },

    /// Carries the trace recorded up to the failing iteration.
    #[error("non-finite iterate at iteration {iter}")]
    Divergence { iter: usize, trace: Vec<TraceRecord> },

    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

pub type Result<T> = std::result::Result<T, SplitError>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(SplitError::DimensionMismatch { expected, got })
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> SplitError {
    SplitError::InvalidParameter(msg.into())
}
