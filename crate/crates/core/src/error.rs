use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("basis size overflow for {nvars} variables at degree {maxdeg}")]
    Sizing { nvars: usize, maxdeg: usize },

    #[error("degree overflow: need degree {needed}, sequence holds {available}")]
    DegreeOverflow { needed: usize, available: usize },

    #[error("variable count mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter set: {0}")]
    InvalidSet(String),

    #[error("invalid regularizer: {0}")]
    InvalidRegularizer(String),

    #[error("invalid relaxation spec: {0}")]
    InvalidSpec(String),

    #[error("malformed SDP problem: {0}")]
    MalformedProblem(String),

    #[error("solution is not optimal (status {0})")]
    NotOptimal(String),

    #[error("unknown variable group {0}")]
    UnknownTag(String),

    #[error("atom extraction failed: {0}")]
    Extraction(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("infeasible geometry: {0}")]
    InfeasibleGeometry(String),

    #[error("clustering error: {0}")]
    Cluster(String),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
