use std::io;
use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum QipError {
    #[error(transparent)]
    Core(#[from] qip_core::Error),
    #[error("config line {line}: {msg}")]
    Config { line: usize, msg: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {kind}")]
    Format { path: PathBuf, kind: FormatError },
    #[error("checkpoint does not match the configuration: {0}")]
    Mismatch(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FormatError {
    #[error("bad magic {found:02x?}, expected {expected:02x?}")]
    BadMagic { expected: Vec<u8>, found: Vec<u8> },
    #[error("truncated: need {needed} bytes, have {actual}")]
    Truncated { needed: u64, actual: u64 },
    #[error("{trailing} unexpected trailing bytes")]
    Trailing { trailing: u64 },
    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error("{what} = {value} does not fit the format")]
    Overflow { what: &'static str, value: usize },
    #[error("invalid field: {0}")]
    Invalid(String),
}

impl QipError {
    pub fn config(line: usize, msg: impl Into<String>) -> Self {
        Self::Config { line, msg: msg.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, kind: FormatError) -> Self {
        Self::Format { path: path.into(), kind }
    }

    /// 2 for configuration and argument problems, 3 for runtime faults.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config { .. } => 2,
            Self::Core(qip_core::Error::Config(_)) => 2,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, QipError>;
