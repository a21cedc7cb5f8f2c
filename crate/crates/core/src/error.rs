use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value is out of range or inconsistent with another.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    /// Per-sample gradients need per-sample forward passes, which batch
    /// statistics do not provide.
    #[error("per-sample gradients undefined under batch statistics (model contains batchnorm); use batch clipping (s > 1) or remove batchnorm")]
    BatchNormPerSample,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numeric overflow: {0}")]
    Overflow(String),

    #[error("parse error at byte offset {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
