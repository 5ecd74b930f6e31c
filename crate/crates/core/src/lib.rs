//! Finite-horizon discrete-time mean-field stochastic linear-quadratic
//! control with possibly indefinite weights.

pub mod affine;
pub mod fixtures;
pub mod matnum;
pub mod moments;
pub mod oracle;
mod par;
pub mod problem;
pub mod riccati;
pub mod strategy;

pub use problem::{load_problem, parse_problem, InfoPattern, ProblemData, ProblemError};
