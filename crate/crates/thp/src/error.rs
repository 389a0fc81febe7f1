use std::path::PathBuf;

use thp_core::Error as CoreError;

/// Process exit codes of the `thp` binary.
pub mod exit {
    pub const OK: i32 = 0;
    pub const USAGE: i32 = 1;
    pub const DATA: i32 = 2;
    pub const NUMERICAL: i32 = 3;
}

#[derive(Debug, thiserror::Error)]
pub enum ThpError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: line {line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("{path}: sequence {index} (line {line}): {source}")]
    Sequence {
        path: PathBuf,
        index: usize,
        line: usize,
        #[source]
        source: CoreError,
    },
    #[error("{path}: {message}")]
    Config { path: PathBuf, message: String },
    #[error("model archive {path}: {message}")]
    Archive { path: PathBuf, message: String },
    #[error(transparent)]
    Core(#[from] CoreError),
}

impl ThpError {
    pub fn exit_code(&self) -> i32 {
        match self {
            ThpError::Usage(_) | ThpError::Config { .. } => exit::USAGE,
            ThpError::Io { .. } | ThpError::Parse { .. } | ThpError::Sequence { .. } | ThpError::Archive { .. } => {
                exit::DATA
            }
            ThpError::Core(e) => match e {
                CoreError::InvalidConfig(_) => exit::USAGE,
                CoreError::InvalidSequence { .. }
                | CoreError::IndexOutOfRange { .. }
                | CoreError::TooShort { .. }
                | CoreError::OutsideInterval { .. } => exit::DATA,
                CoreError::NonFinite { .. }
                | CoreError::Divergence { .. }
                | CoreError::Shape { .. }
                | CoreError::NotScalar { .. } => exit::NUMERICAL,
            },
        }
    }
}

pub type Result<T> = std::result::Result<T, ThpError>;

pub(crate) fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> ThpError + '_ {
    move |source| ThpError::Io {
        path: path.to_path_buf(),
        source,
    }
}
