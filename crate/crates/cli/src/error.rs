use std::io;
use std::path::{Path, PathBuf};

use bpcr_core::Error as CoreError;

/// Failures of a command, each mapped to a process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("schema error in {path}: {message}")]
    Schema { path: PathBuf, message: String },
    #[error("numerical failure: {0}")]
    Numerical(CoreError),
    #[error("{failed} of {total} benchmark cells failed (see failures.json)")]
    Partial { failed: usize, total: usize },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Schema { .. } => 2,
            CliError::Numerical(_) => 3,
            CliError::Partial { .. } => 4,
            CliError::Io { .. } => 1,
        }
    }

    pub fn schema(path: &Path, message: impl Into<String>) -> Self {
        CliError::Schema {
            path: path.to_path_buf(),
            message: message.into(),
        }
    }

    pub fn io(path: &Path, source: io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e.root() {
            CoreError::InvalidConfig(_)
            | CoreError::InvalidParam(_)
            | CoreError::DimensionMismatch { .. }
            | CoreError::Empty(_)
            | CoreError::ConstantColumn(_) => CliError::Config(e.to_string()),
            _ => CliError::Numerical(e),
        }
    }
}
