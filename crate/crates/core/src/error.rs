use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot decode image {path}: {reason}")]
    ImageDecode { path: PathBuf, reason: String },

    /// Caller handed an operation something outside its domain (bad dimensions,
    /// mismatched shapes, out-of-range parameters).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Problems with labels, dataset layout, or class composition.
    #[error("data error: {0}")]
    Data(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("model file: bad magic bytes")]
    BadMagic,

    #[error("model file: unsupported format version {found} (this reader understands {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },

    #[error("model file: checksum mismatch in section `{section}`")]
    Checksum { section: String },

    #[error("model file: truncated ({0})")]
    Truncated(String),

    #[error("model file: {0}")]
    Model(String),

    #[error("feature layout mismatch: model expects {expected:#010x}, got {found:#010x}")]
    LayoutMismatch { expected: u32, found: u32 },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 2 for data problems, 3 for model-file problems.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::BadMagic
            | Error::UnsupportedVersion { .. }
            | Error::Checksum { .. }
            | Error::Truncated(_)
            | Error::Model(_)
            | Error::LayoutMismatch { .. } => 3,
            Error::Config(_) => 1,
            _ => 2,
        }
    }
}
