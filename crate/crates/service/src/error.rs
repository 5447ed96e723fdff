use axum::http::StatusCode;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("{0}")]
    NotFound(String),

    #[error("{0}")]
    Conflict(String),

    #[error("{0}")]
    BadRequest(String),

    #[error(
        "session format version {found} cannot be read by this build (expected {expected}); \
         migrate the data directory or re-import the corpus"
    )]
    Version { found: u32, expected: u32 },

    #[error(transparent)]
    Core(#[from] labelfact_core::Error),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("invalid json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("{0}")]
    Internal(String),
}

pub type Result<T, E = ServiceError> = std::result::Result<T, E>;

impl ServiceError {
    pub fn status(&self) -> StatusCode {
        use labelfact_core::Error as C;
        match self {
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::Conflict(_) | ServiceError::Version { .. } => StatusCode::CONFLICT,
            ServiceError::BadRequest(_) | ServiceError::Json(_) | ServiceError::Config(_) => {
                StatusCode::BAD_REQUEST
            }
            ServiceError::Core(e) => match e {
                C::IndexOutOfRange { .. } | C::NotFound(_) => StatusCode::NOT_FOUND,
                C::InvalidValue(_)
                | C::InvalidHyperParam(_)
                | C::Empty(_)
                | C::Parse { .. }
                | C::Csv(_)
                | C::Json(_) => StatusCode::BAD_REQUEST,
                C::Version { .. } => StatusCode::CONFLICT,
                _ => StatusCode::INTERNAL_SERVER_ERROR,
            },
            ServiceError::Io(_) | ServiceError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    /// Whether the caller, not the system, is at fault.
    pub fn is_user_error(&self) -> bool {
        self.status().is_client_error()
    }
}
