use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::Serialize;
use serde_json::json;
use thiserror::Error;

use super::rbac::DenyReason;
use crate::domain::{TransitionError, Violation};
use crate::gateway::{ConfigError, GatewayError};
use crate::preference::PreferenceError;
use crate::storage::StoreError;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegionViolation {
    /// Position of the region in the request, when it came from one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub index: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub region_id: Option<String>,
    #[serde(flatten)]
    pub violation: Violation,
    pub message: String,
}

impl RegionViolation {
    pub fn new(index: Option<usize>, region_id: Option<String>, violation: Violation) -> Self {
        let message = violation.to_string();
        RegionViolation {
            index,
            region_id,
            violation,
            message,
        }
    }
}

#[derive(Debug, Error)]
pub enum ApiError {
    #[error("missing or expired session")]
    Unauthorized,
    #[error("invalid username or secret")]
    BadCredentials,
    #[error("forbidden: {0}")]
    Forbidden(DenyReason),
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    Conflict(String),
    #[error("region validation failed")]
    Validation(Vec<RegionViolation>),
    #[error("project has no annotators")]
    NoAnnotators,
    #[error("nothing staged for this task")]
    NothingStaged,
    #[error("project has no model backend configured")]
    NoModel,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Store(StoreError),
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::NotFound { .. } => ApiError::NotFound(e.to_string()),
            StoreError::ConflictingWrite { .. } | StoreError::AlreadyExists { .. } => {
                ApiError::Conflict(e.to_string())
            }
            StoreError::UnsupportedFormat(_)
            | StoreError::MalformedWavHeader(_)
            | StoreError::EmptyFile => ApiError::BadRequest(e.to_string()),
            other => ApiError::Store(other),
        }
    }
}

impl From<TransitionError> for ApiError {
    fn from(e: TransitionError) -> Self {
        match e {
            TransitionError::MissingFeedback => ApiError::BadRequest(e.to_string()),
            TransitionError::IllegalTransition { .. } => ApiError::Conflict(e.to_string()),
        }
    }
}

impl From<PreferenceError> for ApiError {
    fn from(e: PreferenceError) -> Self {
        ApiError::BadRequest(e.to_string())
    }
}

impl ApiError {
    pub fn status(&self) -> StatusCode {
        match self {
            ApiError::Unauthorized | ApiError::BadCredentials => StatusCode::UNAUTHORIZED,
            ApiError::Forbidden(_) => StatusCode::FORBIDDEN,
            ApiError::NotFound(_) => StatusCode::NOT_FOUND,
            ApiError::BadRequest(_) | ApiError::Config(_) => StatusCode::BAD_REQUEST,
            ApiError::Conflict(_) | ApiError::NothingStaged => StatusCode::CONFLICT,
            ApiError::Validation(_) | ApiError::NoAnnotators | ApiError::NoModel => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            ApiError::Gateway(GatewayError::BackendTimeout(_)) => StatusCode::GATEWAY_TIMEOUT,
            ApiError::Gateway(GatewayError::Precondition(_)) => StatusCode::UNPROCESSABLE_ENTITY,
            ApiError::Gateway(GatewayError::FormatMismatch { .. }) => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            ApiError::Gateway(_) => StatusCode::BAD_GATEWAY,
            ApiError::Store(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    /// Stable machine-readable error code.
    pub fn code(&self) -> &'static str {
        match self {
            ApiError::Unauthorized => "unauthorized",
            ApiError::BadCredentials => "bad_credentials",
            ApiError::Forbidden(_) => "forbidden",
            ApiError::NotFound(_) => "not_found",
            ApiError::BadRequest(_) => "bad_request",
            ApiError::Conflict(_) => "conflict",
            ApiError::Validation(_) => "validation",
            ApiError::NoAnnotators => "no_annotators",
            ApiError::NothingStaged => "nothing_staged",
            ApiError::NoModel => "no_model",
            ApiError::Gateway(g) => g.class(),
            ApiError::Config(ConfigError::Parse(_)) => "config_parse_error",
            ApiError::Config(ConfigError::Schema { .. }) => "config_schema_error",
            ApiError::Store(_) => "internal",
        }
    }

    pub fn body(&self) -> serde_json::Value {
        match self {
            ApiError::Forbidden(reason) => json!({ "error": "forbidden", "reason": reason.code() }),
            ApiError::Validation(violations) => json!({
                "error": "validation",
                "message": self.to_string(),
                "violations": violations,
            }),
            ApiError::Config(ConfigError::Schema { path, message }) => json!({
                "error": self.code(),
                "message": self.to_string(),
                "path": path,
                "detail": message,
            }),
            other => json!({ "error": other.code(), "message": other.to_string() }),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if let ApiError::Store(e) = &self {
            tracing::error!(error = %e, "store failure");
        }
        (self.status(), Json(self.body())).into_response()
    }
}
