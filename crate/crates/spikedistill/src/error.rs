//! Error taxonomy shared by every module.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Shape or extent disagreement between operands.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// Invalid or inconsistent configuration value.
    #[error("config error: {0}")]
    Config(String),

    /// Operation attempted in a state that does not permit it.
    #[error("state error: {0}")]
    State(String),

    /// Mathematical domain violation (log of non-positive, etc.).
    #[error("domain error: {0}")]
    Domain(String),

    /// A caller-facing contract was violated (non-scalar loss, non-binary spikes, ...).
    #[error("contract error: {0}")]
    Contract(String),

    /// Malformed input file; names the offending field.
    #[error("format error: {0}")]
    Format(String),

    /// Training diverged (non-finite loss or gradient).
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
