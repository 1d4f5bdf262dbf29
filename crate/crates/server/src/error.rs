use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use dpchart_core::Error as CoreError;
use serde_json::json;

use crate::PAYLOAD_VERSION;

/// An error with the HTTP status it maps to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError { status, message: message.into() }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, message)
    }

    pub fn conflict(message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, message)
    }

    pub fn unprocessable(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, message)
    }
}

impl std::fmt::Display for ApiError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.status, self.message)
    }
}

impl std::error::Error for ApiError {}

/// Malformed input is a 400; well-formed input that conflicts with the
/// session's data (unknown attribute, wrong selection kind) is a 422.
impl From<CoreError> for ApiError {
    fn from(e: CoreError) -> Self {
        let status = match &e {
            CoreError::Parse { .. }
            | CoreError::Domain { .. }
            | CoreError::MissingCell { .. }
            | CoreError::Schema(_)
            | CoreError::InvalidArgument(_)
            | CoreError::Json(_) => StatusCode::BAD_REQUEST,
            CoreError::UnknownId(_) => StatusCode::NOT_FOUND,
            CoreError::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::UNPROCESSABLE_ENTITY,
        };
        ApiError::new(status, e.to_string())
    }
}

impl From<serde_json::Error> for ApiError {
    fn from(e: serde_json::Error) -> Self {
        ApiError::bad_request(format!("invalid JSON body: {e}"))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({
            "v": PAYLOAD_VERSION,
            "error": { "status": self.status.as_u16(), "message": self.message },
        });
        (self.status, Json(body)).into_response()
    }
}
