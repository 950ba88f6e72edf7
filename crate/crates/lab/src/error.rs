use std::path::PathBuf;

use thiserror::Error;

/// Exit code for a run whose checks did not pass.
pub const EXIT_CHECK_FAILED: u8 = 1;
/// Exit code for bad configuration or usage.
pub const EXIT_CONFIG: u8 = 2;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] signadam_core::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    /// The experiment ran but cannot produce a result (too many diverged runs).
    #[error("{0}")]
    Failed(String),
}

impl LabError {
    pub fn config(msg: impl Into<String>) -> Self {
        LabError::Config(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        LabError::Io { path: path.into(), source }
    }

    /// Configuration and input problems exit with 2; anything that happened
    /// while running exits with 1.
    pub fn exit_code(&self) -> u8 {
        match self {
            LabError::Config(_) | LabError::Parse { .. } | LabError::Io { .. } => EXIT_CONFIG,
            LabError::Core(e) if e.is_config() => EXIT_CONFIG,
            LabError::Core(signadam_core::Error::InvalidInput(_)) => EXIT_CONFIG,
            _ => EXIT_CHECK_FAILED,
        }
    }
}

pub type Result<T> = std::result::Result<T, LabError>;
