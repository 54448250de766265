use std::path::PathBuf;

use thiserror::Error;

use crate::solver::SliceSolution;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain: {0}")]
    Domain(String),

    #[error("expression error at column {column}: {message}")]
    Expr { column: usize, message: String },

    #[error("operator: {0}")]
    Operator(String),

    #[error("problem data: {0}")]
    Data(String),

    #[error("config {path}: {message}")]
    Config { path: PathBuf, message: String },

    #[error("{path}: shape mismatch: {message}")]
    Shape { path: PathBuf, message: String },

    #[error("axiom {axiom} violated: {detail}")]
    Axiom { axiom: String, detail: String },

    /// Closed switching chain with non-positive total cost found while solving.
    #[error("switching cycle {cycle:?} with total cost {sum} at node {node} (axiom O3)")]
    SwitchCycle { node: usize, cycle: Vec<usize>, sum: f64 },

    #[error("not converged after {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64, best: Box<SliceSolution> },

    #[error("linear solve failed: {0}")]
    Linear(String),

    #[error("barrier: {0}")]
    Barrier(String),

    #[error("{0}")]
    Refused(String),

    #[error("{0}")]
    Usage(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Process exit code: 1 usage/config, 2 axiom violation, 3 convergence failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Axiom { .. } | Error::SwitchCycle { .. } | Error::Refused(_) => 2,
            Error::NotConverged { .. } | Error::Linear(_) => 3,
            _ => 1,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
