use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Inconsistent model or layer configuration.
    #[error("configuration error: {0}")]
    Config(String),
    /// A call received arguments outside its domain.
    #[error("argument error: {0}")]
    Argument(String),
    #[error("shape error: {0}")]
    Shape(String),
    /// Malformed binary file, located by byte offset.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },
    /// JSON document that parses but violates the expected schema.
    #[error("schema error at {path}: {message}")]
    Schema { path: String, message: String },
    #[error("training error in {component}: {message}")]
    Training { component: String, message: String },
    #[error("generation error: {0}")]
    Generation(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn argument(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn schema(path: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Schema { path: path.into(), message: msg.into() }
    }
}
