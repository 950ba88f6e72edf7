use alloc::string::String;
use core::fmt;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// An input was malformed (empty, wrong size, out of range).
    InvalidInput(String),
    /// A coordinate of an input vector was NaN or infinite.
    NonFinite {
        index: usize,
    },
    DimensionMismatch {
        expected: usize,
        found: usize,
    },
    /// Hyperparameters or a problem spec violate a stated constraint.
    Config(String),
    /// Request outside the range where the checked statement applies.
    OutOfScope(String),
    /// The run left the divergence cap at `step`.
    Divergence {
        step: usize,
        value: f64,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::OutOfScope(_))
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidInput(m) => write!(f, "invalid input: {m}"),
            Error::NonFinite { index } => write!(f, "non-finite value at coordinate {index}"),
            Error::DimensionMismatch { expected, found } => {
                write!(f, "dimension mismatch: expected {expected}, found {found}")
            }
            Error::Config(m) => write!(f, "configuration error: {m}"),
            Error::OutOfScope(m) => write!(f, "out of scope: {m}"),
            Error::Divergence { step, value } => {
                write!(f, "run diverged at step {step} (magnitude {value:e})")
            }
        }
    }
}

impl core::error::Error for Error {}
