use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    /// Bad configuration or command-line input.
    #[error("{0}")]
    Invalid(String),

    #[error(transparent)]
    Core(#[from] retsync::Error),

    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },

    /// Some procedure runs ended in `Aborted`.
    #[error("{aborted} of {total} procedure runs aborted")]
    Aborted { aborted: usize, total: usize },
}

pub type Result<T> = std::result::Result<T, HarnessError>;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_ABORT: i32 = 2;
pub const EXIT_IO: i32 = 3;

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Invalid(_) => EXIT_INVALID,
            HarnessError::Core(retsync::Error::Io(_)) | HarnessError::Io { .. } => EXIT_IO,
            HarnessError::Core(_) => EXIT_INVALID,
            HarnessError::Aborted { .. } => EXIT_ABORT,
        }
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> HarnessError {
    HarnessError::Invalid(msg.into())
}
