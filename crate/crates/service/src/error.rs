use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::Json;
use draft_core::embed::EmbedError;
use draft_core::genclient::{FailureKind, GenError};
use draft_core::pipeline::PipelineError;
use draft_core::prompt::PromptError;
use draft_core::vstore::StoreError;
use serde::{Deserialize, Serialize};

/// Body of every error response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
    pub retry_after_s: Option<u64>,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            message: message.into(),
            retry_after_s: None,
        }
    }

    pub fn bad_request(code: &'static str, message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, code, message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut resp = (
            self.status,
            Json(ErrorBody {
                error: self.code.to_string(),
                message: self.message,
            }),
        )
            .into_response();
        if let Some(s) = self.retry_after_s {
            if let Ok(v) = HeaderValue::from_str(&s.to_string()) {
                resp.headers_mut().insert(header::RETRY_AFTER, v);
            }
        }
        resp
    }
}

impl From<GenError> for ApiError {
    fn from(e: GenError) -> Self {
        let message = e.to_string();
        match e.kind {
            FailureKind::BackendUnavailable => ApiError::new(StatusCode::BAD_GATEWAY, "backend_unavailable", message),
            FailureKind::Timeout => ApiError::new(StatusCode::GATEWAY_TIMEOUT, "backend_timeout", message),
            FailureKind::RateLimited { retry_after_ms } => ApiError {
                retry_after_s: retry_after_ms.map(|ms| ms.div_ceil(1000)),
                ..ApiError::new(StatusCode::TOO_MANY_REQUESTS, "rate_limited", message)
            },
            FailureKind::InvalidRequest => ApiError::new(StatusCode::BAD_GATEWAY, "backend_rejected", message),
            FailureKind::PayloadTooLarge => ApiError::new(StatusCode::BAD_GATEWAY, "payload_too_large", message),
            FailureKind::Misconfigured => {
                ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "backend_misconfigured", message)
            }
        }
    }
}

impl From<EmbedError> for ApiError {
    fn from(e: EmbedError) -> Self {
        match e {
            EmbedError::EmptyInput => ApiError::bad_request("empty_input", e.to_string()),
            EmbedError::BackendUnavailable { .. } => {
                ApiError::new(StatusCode::BAD_GATEWAY, "embedder_unavailable", e.to_string())
            }
            other => ApiError::internal(other.to_string()),
        }
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::EmptyStore => ApiError::new(StatusCode::CONFLICT, "store_empty", e.to_string()),
            StoreError::InvalidK => ApiError::bad_request("invalid_k", e.to_string()),
            StoreError::Embed { source, .. } => source.into(),
            other => ApiError::internal(other.to_string()),
        }
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::EmptyContext => ApiError::bad_request("empty_context", e.to_string()),
            PipelineError::ContextTooLong { .. } => ApiError::bad_request("context_too_long", e.to_string()),
            PipelineError::InvalidRequest(_) => ApiError::bad_request("invalid_request", e.to_string()),
            PipelineError::StoreEmpty => ApiError::new(StatusCode::CONFLICT, "store_empty", e.to_string()),
            PipelineError::Prompt(PromptError::BudgetTooSmall { .. }) => {
                ApiError::bad_request("prompt_budget_exceeded", e.to_string())
            }
            PipelineError::Generation(g) => g.into(),
            PipelineError::Embed(x) => x.into(),
            PipelineError::Store(x) => x.into(),
            PipelineError::Record { source, .. } => (*source).into(),
            other => ApiError::internal(other.to_string()),
        }
    }
}
