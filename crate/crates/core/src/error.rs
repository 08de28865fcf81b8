use thiserror::Error;

/// Errors raised by model fitting, trial simulation and study orchestration.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter or configuration value is invalid.
    #[error("configuration error: {0}")]
    Config(String),

    /// An argument lies outside the domain of a function.
    #[error("domain error: {0}")]
    Domain(String),

    /// A numerical routine failed (e.g. a non positive definite precision).
    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn config<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}
