use std::path::PathBuf;

/// Errors reported by the registration library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed MetaImage header ({path}): {reason}")]
    MalformedHeader { path: PathBuf, reason: String },
    #[error("unsupported MetaImage element type: {0}")]
    UnsupportedElementType(String),
    #[error("raw data size mismatch ({path}): header implies {expected} bytes, file holds {found}")]
    SizeMismatch {
        path: PathBuf,
        expected: u64,
        found: u64,
    },
    #[error("invalid input: {0}")]
    Validation(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }
}
