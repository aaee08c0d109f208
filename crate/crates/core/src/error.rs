use thiserror::Error;

/// Errors raised by the identification library.
#[derive(Debug, Error)]
pub enum SysIdError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("matrix is not positive semidefinite (min eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },
    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),
    #[error("index {index} out of range (horizon {horizon})")]
    OutOfRange { index: usize, horizon: usize },
    #[error("trajectory too short: need horizon >= {needed}, have {have}")]
    TrajectoryTooShort { needed: usize, have: usize },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("rank deficient: {0}")]
    RankDeficient(String),
    #[error("zero empirical variance along a probe direction")]
    ZeroVariance,
    #[error("stabilizer infeasible (max violation {max_violation:e})")]
    Infeasible { max_violation: f64 },
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, SysIdError>;
