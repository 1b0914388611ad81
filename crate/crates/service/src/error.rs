//! Uniform `{code, message, details}` error bodies.

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::Serialize;
use serde_json::{json, Value};

use stopline_core::config::ConfigError;
use stopline_core::store::StoreError;

#[derive(Debug, Clone, Serialize)]
pub struct ErrorBody {
    pub code: &'static str,
    pub message: String,
    pub details: Value,
}

#[derive(Debug, Clone)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            body: ErrorBody {
                code,
                message: message.into(),
                details: Value::Null,
            },
        }
    }

    pub fn with_details(mut self, details: Value) -> Self {
        self.body.details = details;
        self
    }

    pub fn validation(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "validation", message)
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", message)
    }

    pub fn conflict(message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, "conflict", message)
    }

    pub fn unauthorized() -> Self {
        Self::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing or wrong bearer token")
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<ConfigError> for ApiError {
    fn from(e: ConfigError) -> Self {
        let message = e.to_string();
        match e {
            ConfigError::Invalid { key, .. } => Self::validation(message).with_details(json!({ "key": key })),
            ConfigError::Parse(_) => Self::validation(message),
            ConfigError::UnknownCamera(id) => Self::not_found(message).with_details(json!({ "camera_id": id })),
            ConfigError::UnknownPan { camera_id, pan_index } => {
                Self::not_found(message).with_details(json!({ "camera_id": camera_id, "pan_index": pan_index }))
            }
            ConfigError::Io { .. } => Self::internal(message),
        }
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let message = e.to_string();
        match e {
            StoreError::NotFound(id) => Self::not_found(message).with_details(json!({ "violation_id": id })),
            StoreError::Conflict { id, status } => {
                Self::conflict(message).with_details(json!({ "violation_id": id, "status": status }))
            }
            StoreError::Invalid(_) => Self::validation(message),
            StoreError::Io { .. } | StoreError::Corrupt { .. } => Self::internal(message),
        }
    }
}
