use thiserror::Error;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors emitted by tensor ops, layers, models, and the data pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes do not satisfy an operation's contract.
    #[error("shape error: {0}")]
    Shape(String),

    /// A coordinate or rectangle falls outside its tensor.
    #[error("bounds error: {0}")]
    Bounds(String),

    /// An argument violates a precondition unrelated to shapes.
    #[error("argument error: {0}")]
    Argument(String),

    /// A model or generator configuration is inconsistent.
    #[error("config error: {0}")]
    Config(String),

    /// A manifest or annotation failed validation.
    #[error("validation error: {0}")]
    Validation(String),

    /// Malformed input file (JSON manifest, PPM image, ...).
    #[error("parse error: {0}")]
    Parse(String),

    /// A computation produced a non-finite value where finiteness is required.
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
