use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::Serialize;
use serde_json::Value;

/// JSON error envelope. `code` is a stable machine-readable string.
#[derive(Debug, Clone, Serialize)]
pub struct ErrorBody {
    pub code: &'static str,
    pub message: String,
    pub detail: Value,
}

#[derive(Debug, Clone)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            body: ErrorBody {
                code,
                message: message.into(),
                detail: Value::Null,
            },
        }
    }

    pub fn with_detail(mut self, detail: Value) -> Self {
        self.body.detail = detail;
        self
    }

    pub fn invalid_checkpoint(raw: &str) -> Self {
        Self::new(
            StatusCode::BAD_REQUEST,
            "invalid_checkpoint",
            format!("checkpoint must be an integer in 1..=4, got `{raw}`"),
        )
        .with_detail(serde_json::json!({ "min": 1, "max": 4, "got": raw }))
    }

    pub fn unknown_student(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "unknown_student", format!("no student `{id}` in the cohort"))
            .with_detail(serde_json::json!({ "student": id }))
    }

    pub fn not_found() -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint")
    }

    pub fn internal(code: &'static str, err: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, code, err.to_string())
    }
}

impl From<gradecast_core::Error> for ApiError {
    fn from(e: gradecast_core::Error) -> Self {
        match e {
            gradecast_core::Error::UnknownStudent(id) => ApiError::unknown_student(&id),
            other => ApiError::internal("internal", other),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}
