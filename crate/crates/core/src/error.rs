use thiserror::Error;

/// Errors raised by the fairshare library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("invalid user ordering: {0}")]
    InvalidOrdering(String),

    #[error("invalid covariance for user {user}: {reason}")]
    InvalidCovariance { user: usize, reason: String },

    #[error("invalid power allocation: {0}")]
    InvalidAllocation(String),

    #[error("sum rate is zero, fairness is undefined")]
    ZeroSumRate,

    #[error("l1 fairness is undefined for a single user")]
    UndefinedForSingleUser,

    #[error("user {user} has zero effective gain, the fairness objective is degenerate")]
    InfeasibleFairness { user: usize },

    #[error("all tradeoff points coincide, the envelope is a single point")]
    DegenerateCurve,

    #[error("target average rate {target} outside achievable range [{min}, {max}]")]
    InfeasibleTarget { target: f64, min: f64, max: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;
