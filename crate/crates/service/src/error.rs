use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde_json::json;

/// Error body: `{"error": {"code": ..., "message": ...}}`.
#[derive(Debug, Clone)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
    pub retry_after_ms: Option<u64>,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
            retry_after_ms: None,
        }
    }

    pub fn not_found(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, code, message)
    }

    pub fn invalid(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_argument", message)
    }

    pub fn busy(job: &str, retry_after_ms: u64) -> Self {
        Self {
            status: StatusCode::CONFLICT,
            code: "recompute_in_progress",
            message: format!("{job} is running; retry later"),
            retry_after_ms: Some(retry_after_ms),
        }
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl From<transens_core::Error> for ApiError {
    fn from(e: transens_core::Error) -> Self {
        use transens_core::Error as E;
        match e {
            E::InvalidArgument(_) | E::Validation(_) | E::Session(_) | E::NonFinite(_) => {
                Self::invalid(e.to_string())
            }
            E::Alignment(_) | E::NoDisplacementSignal(_) | E::CoincidentAtoms(..) => {
                Self::new(StatusCode::UNPROCESSABLE_ENTITY, "engine_rejected", e.to_string())
            }
            _ => Self::internal(e.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut error = json!({ "code": self.code, "message": self.message });
        if let Some(ms) = self.retry_after_ms {
            error["retry_after_ms"] = json!(ms);
        }
        let mut resp = (self.status, Json(json!({ "error": error }))).into_response();
        if let Some(ms) = self.retry_after_ms {
            let secs = ms.div_ceil(1000).max(1);
            resp.headers_mut()
                .insert(header::RETRY_AFTER, HeaderValue::from(secs));
        }
        resp
    }
}

pub type ApiResult<T> = Result<T, ApiError>;
