//! A dense primal-dual interior-point method for small, smooth, possibly
//! nonconvex nonlinear programs.
//!
//! The algorithm follows the usual barrier recipe: slack variables for
//! inequalities, a monotone barrier parameter, fraction-to-the-boundary step
//! rules, an ℓ2 merit-function backtracking line search, and inertia
//! correction of the condensed KKT matrix via a Bunch–Kaufman factorization.
//! Problems are described through the [`NlpProblem`] trait.

pub mod ldl;
mod problem;
mod solver;

pub use problem::NlpProblem;
pub use solver::{
    solve, solve_traced, warm_start_from, HessianMode, IterationTrace, NlpSolution, SolverOptions,
    Status,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SolverError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("variable {index} has lower bound {lower} above upper bound {upper}")]
    InvalidBounds { index: usize, lower: f64, upper: f64 },
}
