use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("degenerate data: {0}")]
    DegenerateData(String),
    #[error("matrix is not positive semidefinite: {0}")]
    NotPositiveSemidefinite(String),
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
