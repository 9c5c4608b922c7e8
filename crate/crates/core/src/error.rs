use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum HhsmmError {
    /// Caller supplied inconsistent or out-of-domain input.
    #[error("invalid input: {0}")]
    Invalid(String),
    /// A model specification violates one or more invariants.
    #[error("model validation failed: {0}")]
    Validation(String),
    /// All states have zero likelihood at time `t` of a sequence.
    #[error("likelihood underflow at t = {t}: no state can emit the observation")]
    Underflow { t: usize },
    /// A weighted regression design is rank deficient.
    #[error("rank-deficient regression design for state {state}")]
    RankDeficient { state: usize },
    #[error("zero variance")]
    ZeroVariance,
    #[error("emission family `{0}` has no sampler")]
    NoSampler(&'static str),
    /// Generic numerical breakdown (singular matrices, non-finite objectives).
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl HhsmmError {
    /// True for failures of the numerical machinery rather than bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            HhsmmError::Underflow { .. }
                | HhsmmError::RankDeficient { .. }
                | HhsmmError::ZeroVariance
                | HhsmmError::Numeric(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, HhsmmError>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(HhsmmError::Invalid(msg.into()))
}
