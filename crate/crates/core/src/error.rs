use std::path::PathBuf;

/// Errors produced by the planning, scheduling and I/O layers.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid model geometry: {0}")]
    InvalidModel(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("index {index} out of range (len {len})")]
    OutOfRange { index: usize, len: usize },

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("instance too large for exhaustive search: {0}")]
    InstanceTooLarge(String),

    #[error("inconsistent scheduler state: {0}")]
    InconsistentState(String),

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("duplicate request id {0}")]
    DuplicateId(u64),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
