use std::path::PathBuf;

/// Errors produced by volume/surface I/O, configuration validation and the
/// tracking pipelines.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Malformed GPRV or truth-CSV content. `offset` is the byte position of
    /// the first offending byte in the input file.
    #[error("format error at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("value out of range: {0}")]
    OutOfRange(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(offset: u64, msg: impl Into<String>) -> Self {
        Error::Format {
            offset,
            msg: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
