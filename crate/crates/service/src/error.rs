use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("unknown session {0}")]
    UnknownSession(String),

    #[error("trial {index} does not exist (plan has {len} trials)")]
    UnknownTrial { index: usize, len: usize },

    #[error("trial {requested} requested, but the current trial is {cursor}")]
    OutOfOrder { requested: usize, cursor: usize },

    #[error("trial {0} already has a response")]
    Duplicate(usize),

    #[error("malformed request: {0}")]
    Malformed(String),

    #[error("stimulus bank holds {available} trials, session needs {needed}")]
    InsufficientStimuli { available: usize, needed: usize },

    #[error("no responses recorded")]
    NoData,

    #[error("no stimulus asset {0}")]
    UnknownAsset(String),

    #[error("storage: {0}")]
    Storage(String),

    #[error(transparent)]
    Core(#[from] motionseg::Error),
}

impl ServiceError {
    pub fn status(&self) -> StatusCode {
        match self {
            ServiceError::UnknownSession(_) | ServiceError::UnknownTrial { .. }
            | ServiceError::NoData
            | ServiceError::UnknownAsset(_) => {
                StatusCode::NOT_FOUND
            }
            ServiceError::OutOfOrder { .. } | ServiceError::Duplicate(_) => StatusCode::CONFLICT,
            ServiceError::Malformed(_) | ServiceError::InsufficientStimuli { .. } => StatusCode::BAD_REQUEST,
            ServiceError::Storage(_) | ServiceError::Core(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let body = Json(serde_json::json!({ "error": self.to_string() }));
        (self.status(), body).into_response()
    }
}

pub type Result<T, E = ServiceError> = std::result::Result<T, E>;
