use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};

use reenact_core::Error as CoreError;

/// Wire shape of every error: `{code, message, field?, retry_after_ms?}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub retry_after_ms: Option<u64>,
}

#[derive(Debug, thiserror::Error)]
#[error("{}", body.message)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            body: ErrorBody {
                code: code.into(),
                message: message.into(),
                field: None,
                retry_after_ms: None,
            },
        }
    }

    pub fn not_found(what: &str, id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", format!("no {what} `{id}`"))
    }

    pub fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        let mut e = Self::new(StatusCode::UNPROCESSABLE_ENTITY, "validation", message);
        e.body.field = Some(field.into());
        e
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    pub fn busy(retry_after_ms: u64) -> Self {
        let mut e = Self::new(
            StatusCode::CONFLICT,
            "busy",
            "another render is running for this session; retry shortly",
        );
        e.body.retry_after_ms = Some(retry_after_ms);
        e
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

fn innermost(e: &CoreError) -> &CoreError {
    match e {
        CoreError::Stage { source, .. } => innermost(source),
        e => e,
    }
}

impl From<CoreError> for ApiError {
    fn from(e: CoreError) -> Self {
        let message = e.to_string();
        let field = e.field().map(str::to_string);
        let (status, code) = match innermost(&e) {
            CoreError::Validation { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "validation"),
            CoreError::Capability(_) => (StatusCode::NOT_IMPLEMENTED, "capability"),
            CoreError::Locked(_) => (StatusCode::CONFLICT, "locked"),
            CoreError::Detection(_) | CoreError::DegenerateFace(_) => (StatusCode::UNPROCESSABLE_ENTITY, "detection"),
            CoreError::Optimization { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "optimization"),
            CoreError::Format(_) | CoreError::Corruption(_) | CoreError::UnsupportedVersion(_) | CoreError::Load { .. } => {
                (StatusCode::UNPROCESSABLE_ENTITY, "bad_input")
            }
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        let mut out = Self::new(status, code, message);
        out.body.field = field;
        out
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let retry = self.body.retry_after_ms;
        let mut resp = (self.status, Json(self.body)).into_response();
        if let Some(ms) = retry {
            let secs = ms.div_ceil(1000).max(1);
            resp.headers_mut().insert(header::RETRY_AFTER, HeaderValue::from(secs));
        }
        resp
    }
}

pub type ApiResult<T> = Result<T, ApiError>;
