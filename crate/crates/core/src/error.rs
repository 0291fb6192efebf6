use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("capacity exceeded: {what} needs {needed}, limit is {limit}")]
    Capacity {
        what: &'static str,
        needed: u128,
        limit: u128,
    },

    #[error("integer overflow while computing {0}")]
    Overflow(&'static str),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path} at row {row}, column {col}: {msg}")]
    Parse {
        path: PathBuf,
        row: usize,
        col: usize,
        msg: String,
    },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("monomial {0} is not in the basis")]
    OutOfBasis(String),

    #[error("level {level} not supported for {kind}: {reason}")]
    Level {
        kind: &'static str,
        level: usize,
        reason: &'static str,
    },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("coupling extraction failed: marginal violation {violation:.3e} exceeds {limit:.0e}")]
    Extraction { violation: f64, limit: f64 },

    #[error("sandwich violated: lower bound {lower} exceeds upper bound {upper} beyond tolerance {tol:.3e}")]
    Sandwich { lower: f64, upper: f64, tol: f64 },

    #[error("feasibility audit failed: {0}")]
    Feasibility(String),

    #[error("solver failure: {0}")]
    Solver(String),
}

pub type Result<T> = std::result::Result<T, Error>;
