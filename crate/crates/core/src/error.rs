use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch between {left} and {right}: {detail}")]
    DimensionMismatch {
        left: &'static str,
        right: &'static str,
        detail: String,
    },

    #[error("{0} is not positive definite")]
    NotPositiveDefinite(&'static str),

    #[error("plant validation failed: {0}")]
    InvalidPlant(String),

    #[error("{equation} iteration did not converge within {iterations} iterations (last relative change {last_change:e})")]
    NoConvergence {
        equation: &'static str,
        iterations: usize,
        last_change: f64,
    },

    #[error("{what} is unstable (spectral radius {radius})")]
    Unstable { what: &'static str, radius: f64 },

    #[error("probability {value} for {what} is outside {range}")]
    InvalidProbability {
        what: &'static str,
        value: f64,
        range: &'static str,
    },

    #[error("predicted-error covariance is singular")]
    SingularCovariance,

    #[error("cost diverges: sqrt(1 - q*p) * rho(A) = {0} >= 1")]
    CostDiverges(f64),

    #[error("protocol violation: {0}")]
    ProtocolViolation(&'static str),

    #[error("pure STETT has no tunable covariance after the collision at slot {slot} (use CETT)")]
    StettAfterCollision { slot: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}
