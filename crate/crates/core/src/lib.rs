#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Operator splitting for structured monotone inclusions `0 ∈ Ax + Bx + Cx`.
//!
//! `A` is maximally monotone and handled through (warped) resolvents, `B` is
//! monotone and Lipschitz, `C` is cocoercive. The crate provides a
//! deterministic forward-backward-half-forward method with nonlinear kernels
//! and momentum, a loopless variance-reduced variant for finite sums
//! `B = ΣBᵢ`, problem builders, and Lyapunov-based diagnostics.

pub mod diagnostics;

pub mod error;
pub mod harness;
pub mod kernels;
pub mod metric;
pub mod operators;
pub mod problems;
pub mod solver_det;
pub mod solver_stoch;

pub use error::{Result, SplitError};
pub use metric::{Matrix, Metric, Vector};
