use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use pprl_core::{EngineError, StoreError, TimeError};
use serde::Serialize;

/// Error returned by every handler. Messages never carry counts or the secret.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub field: Option<&'static str>,
    pub message: String,
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    error: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    field: Option<&'a str>,
    message: &'a str,
}

impl ApiError {
    pub fn invalid(field: &'static str, message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            code: "invalid_request",
            field: Some(field),
            message: message.into(),
        }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            code: "invalid_request",
            field: None,
            message: message.into(),
        }
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::NOT_FOUND,
            code: "not_found",
            field: None,
            message: message.into(),
        }
    }

    pub fn no_snapshot() -> Self {
        Self {
            status: StatusCode::SERVICE_UNAVAILABLE,
            code: "no_snapshot",
            field: None,
            message: "no snapshot is loaded".into(),
        }
    }

    pub fn unauthorized() -> Self {
        Self {
            status: StatusCode::UNAUTHORIZED,
            code: "unauthorized",
            field: None,
            message: "missing or invalid admin token".into(),
        }
    }

    pub fn conflict() -> Self {
        Self {
            status: StatusCode::CONFLICT,
            code: "ingest_in_progress",
            field: None,
            message: "another ingestion is already running".into(),
        }
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            code: "internal",
            field: None,
            message: message.into(),
        }
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::UnknownEntity(_) => Self::not_found(e.to_string()),
            StoreError::Field(_) | StoreError::InvalidEvent(_) | StoreError::EmptyEntityId => {
                Self::bad_request(e.to_string())
            }
            StoreError::Time(t) => t.into(),
            StoreError::Io(_) | StoreError::Snapshot(_) | StoreError::HierarchyFormat(_) => {
                Self::bad_request(e.to_string())
            }
            other => Self::internal(other.to_string()),
        }
    }
}

impl From<TimeError> for ApiError {
    fn from(e: TimeError) -> Self {
        Self::bad_request(e.to_string())
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::Store(s) => s.into(),
            EngineError::Time(t) => t.into(),
            EngineError::Noise(_) => Self::bad_request(e.to_string()),
            EngineError::InvalidTopK { .. } => Self::invalid("topK", e.to_string()),
            other => Self::internal(other.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            error: self.code,
            field: self.field,
            message: &self.message,
        };
        (self.status, Json(body)).into_response()
    }
}
