use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{what} index {index} out of range (bound {bound})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        bound: usize,
    },

    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error("invalid hyperparameter: {0}")]
    InvalidHyperParam(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("not found: {}", .0.display())]
    NotFound(PathBuf),

    #[error("snapshot format error: {0}")]
    Format(String),

    #[error("unsupported snapshot version {found} (this build reads version {expected})")]
    Version { found: u32, expected: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn index(what: &'static str, index: usize, bound: usize) -> Self {
        Error::IndexOutOfRange { what, index, bound }
    }
}
