use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the dehazing stack.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes or channel counts do not line up.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// An invalid configuration value (kernel size, mode name, reduction ratio, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// A call violated an operation's precondition.
    #[error("contract error: {0}")]
    Contract(String),

    /// Inverting the scattering model where the transmission is too small.
    #[error("singular transmission: {0}")]
    Singularity(String),

    /// Malformed binary input (PPM or checkpoint).
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    /// A training step produced a NaN or infinite value.
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn format(offset: u64, msg: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
