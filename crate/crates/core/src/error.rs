use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("index {index} outside supported range 0..={max}")]
    Range { index: usize, max: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("root bracketing failed for N = {0}")]
    Bracketing(usize),

    #[error("coupling A(1)[{next},{index}] underflowed while building dark state", next = .index + 1)]
    Underflow { index: usize },

    #[error("numerical instability at step {step} (t = {t}): {reason}")]
    Instability { step: usize, t: f64, reason: String },

    #[error("phonon truncation leak at step {step} (t = {t}): tail population {tail:e} exceeds {limit:e}")]
    TruncationLeak {
        step: usize,
        t: f64,
        tail: f64,
        limit: f64,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// True for failures raised by the time integrator rather than by bad input.
    pub fn is_numerical_abort(&self) -> bool {
        matches!(
            self,
            Error::Instability { .. } | Error::TruncationLeak { .. }
        )
    }
}
