use std::path::PathBuf;

use thiserror::Error;

/// Every failure the library can report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{file}: row {row}{}: {msg}", column.as_ref().map(|c| format!(", column `{c}`")).unwrap_or_default())]
    Parse {
        file: String,
        row: usize,
        column: Option<String>,
        msg: String,
    },

    #[error("invalid label code {code} for {num_classes} classes")]
    InvalidLabel { code: usize, num_classes: usize },

    #[error("quota requested for class `{0}` which is absent from the dataset")]
    MissingClass(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    Shape {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("feature mask mismatch: {0}")]
    MaskMismatch(String),

    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),

    #[error("inconsistent state: {0}")]
    Consistency(String),

    #[error("invalid target: {0}")]
    InvalidTarget(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("unsupported model format version {found} (this build reads version {supported})")]
    Version { found: u32, supported: u32 },

    #[error("model file checksum mismatch")]
    Checksum,

    #[error("model file truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("malformed model file: {0}")]
    ModelFormat(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(context: &'static str, expected: usize, got: usize) -> Self {
        Error::Shape {
            context,
            expected,
            got,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
