use thiserror::Error;

/// Errors raised across the library.
///
/// The variants line up with the CLI's exit-code classes: configuration
/// problems, malformed or inconsistent data, and solver failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("solver error at step {step}: {message}")]
    Solver { step: usize, message: String },

    #[error("environment error: {0}")]
    Environment(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("cross-validation error: {0}")]
    CrossValidation(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }
}
