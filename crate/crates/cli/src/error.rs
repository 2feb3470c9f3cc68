use std::path::PathBuf;

use sparse_cca::Error as CoreError;
use thiserror::Error;

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: line {line}{}: {message}", column.map(|c| format!(", column {c}")).unwrap_or_default())]
    Format {
        path: String,
        line: u64,
        column: Option<usize>,
        message: String,
    },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("configuration: {0}")]
    Config(String),
    #[error("{context}: {source}")]
    Core {
        context: String,
        #[source]
        source: CoreError,
    },
}

impl CliError {
    pub fn format(path: &str, line: u64, column: Option<usize>, message: impl Into<String>) -> Self {
        CliError::Format {
            path: path.to_string(),
            line,
            column,
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core {
                source: CoreError::NumericalFailure(_) | CoreError::NotPositiveSemidefinite(_),
                ..
            } => 2,
            _ => 1,
        }
    }
}

/// Attach the module/operation name to a core error.
pub trait Context<T> {
    fn context(self, what: &str) -> CliResult<T>;
}

impl<T> Context<T> for sparse_cca::Result<T> {
    fn context(self, what: &str) -> CliResult<T> {
        self.map_err(|source| CliError::Core {
            context: what.to_string(),
            source,
        })
    }
}
