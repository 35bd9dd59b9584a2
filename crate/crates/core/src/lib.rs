//! Monotone smoothing splines with an upper bound.
//!
//! Fits the curve minimizing `1/2 ∫ x''² + λ/2 Σ w_i (x(t_i) - α_i)²` over
//! nondecreasing curves with `x(T) <= x_max`, either pinned at the origin or
//! with a free nonnegative start. The problem reduces to knot values and
//! slopes ([`objective`]), each interval contributing a closed-form minimum
//! energy ([`kernel`]). The nonconvex choice of which intervals need a flat
//! piece is handled by branch and bound ([`bnb`]).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bnb;
pub mod cdf;
pub mod error;
pub mod isotonic;
pub mod kernel;
pub mod objective;
pub mod oracle;
pub mod problem;
mod qp;
pub mod spline;
pub mod subproblem;

pub use bnb::{assemble, solve, BnbConfig, NodeOrder, SolveReport, SolveStatus};
pub use cdf::{density, samples_to_cdf_data, HistogramSpec};
pub use error::{Error, Result};
pub use kernel::{IntervalParams, Regime};
pub use objective::{IntervalMode, RegimeAssignment};
pub use problem::{Boundary, DataPoint, KnotVector, ProblemSpec};
pub use spline::SplineCurve;

pub use subproblem::{fit_step1, solve_node, SubproblemResult};
