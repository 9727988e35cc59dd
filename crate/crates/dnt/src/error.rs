//! Crate-wide error type.

use std::path::PathBuf;

/// Errors produced by the library.
///
/// The CLI maps `Config`, `Usage`, and `Manifest` to exit code 2
/// (misconfiguration) and everything else to exit code 1.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A structural problem: incompatible shapes, invalid hyperparameters,
    /// an architecture that cannot be built.
    #[error("configuration error: {0}")]
    Config(String),

    /// A per-call misuse: out-of-range label, empty input sequence,
    /// crop larger than the image.
    #[error("usage error: {0}")]
    Usage(String),

    /// File system failure, annotated with the offending path.
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Undecodable or unsupported file content.
    #[error("format error: {0}")]
    Format(String),

    /// Dataset manifest construction or parsing failure.
    #[error("manifest error: {0}")]
    Manifest(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
