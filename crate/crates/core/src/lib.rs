//! Solver and verification suite for systems of degenerate elliptic obstacle problems
//! with interconnected obstacles (multi-mode optimal switching).

// `!(x > y)` comparisons deliberately reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod barriers;
pub mod config;
pub mod dump;
pub mod error;
pub mod expr;
pub mod grid;
pub mod operators;
pub mod problem;
pub mod report;
pub mod run;
pub mod solver;
pub mod switching;

pub use error::{Error, Result};
pub use grid::{Domain, Grid, NodeClass};
pub use operators::{Coef, LinearTerms, OperatorSpec};
pub use problem::ProblemInstance;
pub use report::{Axiom, ValidationReport};
pub use solver::{solve_family, Method, SolutionField, SolveParams};
pub use switching::{ProblemData, SwitchingCosts};
