use thiserror::Error;

/// Errors raised while validating, analyzing, simulating or verifying an urn system.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("negative entry: {0}")]
    NegativeEntry(String),

    #[error("column sums not constant: {0}")]
    ColumnSumNotConstant(String),

    #[error("interaction row {row} sums to {sum}, expected 1")]
    RowNotStochastic { row: usize, sum: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("internal invariant violated: {0}")]
    InternalInvariantViolation(String),

    #[error("matrix is defective or too close to defective: {0}")]
    DefectiveMatrix(String),

    #[error("eigenvalue 1 is not simple in subsystem {subsystem} (multiplicity {multiplicity})")]
    NonSimplePerron { subsystem: String, multiplicity: usize },

    #[error("singular solve in subsystem {subsystem}: {detail}")]
    SingularSolve { subsystem: String, detail: String },

    #[error("reduction basis ill-conditioned in subsystem {subsystem} (condition {condition:e})")]
    IllConditionedReduction { subsystem: String, condition: f64 },

    #[error("residual spectrum is empty")]
    EmptyResidualSpectrum,

    #[error("rate regime mismatch: {0}")]
    RegimeMismatch(String),

    #[error("urn {urn} has non-positive total {total}")]
    NumericUnderflow { urn: usize, total: f64 },

    #[error("invalid checkpoint: {0}")]
    InvalidCheckpoint(String),

    #[error("unbalanced model: {0}")]
    UnbalancedModel(String),

    #[error("insufficient checkpoints: {0}")]
    InsufficientCheckpoints(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
