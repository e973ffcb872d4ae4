use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Parameters violate a documented precondition.
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("index {index} out of range (length {len})")]
    OutOfRange { index: usize, len: usize },

    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("division by zero")]
    DivisionByZero,

    /// Operation undefined on the given arguments (0^0, negative base, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// A probability formula produced a value outside [0, 1].
    #[error("probability out of range: {0}")]
    ProbabilityOutOfRange(String),

    /// The monotonicity hypothesis of the worst-case model does not hold.
    #[error("flip probabilities are not monotone at residual weight {0}")]
    NonMonotone(usize),

    #[error("worst-case permutation mode requires the true error vector")]
    MissingTrueError,

    #[error("malformed input: {0}")]
    Malformed(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn params(msg: impl Into<String>) -> Self {
        Error::InvalidParams(msg.into())
    }
}
