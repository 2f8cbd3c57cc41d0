use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("matrix does not have full column rank (smallest singular value {0:e})")]
    RankDeficient(f64),

    #[error("every matrix of the instance is zero")]
    ZeroInstance,

    #[error("blocks do not have the rank-one property (error {0:e})")]
    RopPrecondition(f64),

    #[error("optimal assignment is not unique (strict complementarity margin {0:e})")]
    Tie(f64),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
