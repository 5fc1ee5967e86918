use std::path::PathBuf;

/// Errors produced by the library.
#[derive(thiserror::Error, Debug)]
pub enum Error {
    /// A value lies outside the domain of the function it was passed to.
    #[error("domain error: {0}")]
    Domain(String),

    /// A configuration value is invalid.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Two inputs that must share a grid or sensor config do not.
    #[error("shape or config mismatch: {0}")]
    Mismatch(String),

    /// A masked statistic was requested over an empty mask.
    #[error("empty mask: {0}")]
    EmptyMask(&'static str),

    /// A point set that must be non-empty is empty.
    #[error("empty point set: {0}")]
    EmptyPointSet(&'static str),

    /// The optimizer produced a non-finite loss.
    #[error("non-finite loss at iteration {iteration}: {detail}")]
    NonFinite { iteration: usize, detail: String },

    /// A file could not be decoded.
    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error on {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
