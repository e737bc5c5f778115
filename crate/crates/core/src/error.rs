use thiserror::Error;

/// Errors raised by the core routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid instance: {0}")]
    InvalidInstance(String),

    #[error("matrix is numerically rank deficient ({factorization})")]
    RankDeficient { factorization: &'static str },

    #[error("iterate is not strictly interior: min slack {min_slack:e}")]
    NotInterior { min_slack: f64 },

    #[error("barrier parameter must be positive, got {0:e}")]
    NonPositiveMu(f64),

    #[error("NES right-hand side is zero; the Newton direction is zero")]
    ZeroRightHandSide,

    #[error("zero denominator while rescaling the oracle direction")]
    ZeroDenominator,

    #[error("condition number estimate failed: {0}")]
    ConditionEstimate(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("bisection on the start perturbation did not converge, last bracket [{lo:e}, {hi:e}]")]
    Bisection { lo: f64, hi: f64 },

    #[error("refinement round {round} failed: {reason}")]
    Round { round: usize, reason: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed instance file: {0}")]
    Json(#[from] serde_json::Error),

    #[error("malformed trace file: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
