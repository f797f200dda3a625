//! HTTP API over the drafting pipeline.
//!
//! | route                               | purpose                                   |
//! |-------------------------------------|-------------------------------------------|
//! | `POST /api/draft`                   | retrieve precedents and draft a decision  |
//! | `POST /api/draft/{session_id}/discard` | drop a draft without persisting it     |
//! | `POST /api/adrs`                    | accept a draft, persisting it to the store |
//! | `GET /api/adrs?query=..&k=..`       | retrieval only                            |
//! | `GET /api/health`                   | store size and backend status             |
//!
//! Errors are `{"error": code, "message": text}`.

mod config;
mod error;
mod state;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::routing::{get, post};
use axum::{Json, Router};
use draft_core::genclient::MAX_PAYLOAD_BYTES;
use draft_core::pipeline::{InferenceMode, InferenceRequest, PipelineError};
use draft_core::vstore::{RetrievalHit, StoreError};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::net::TcpListener;
use tower_http::cors::{AllowOrigin, CorsLayer};
use tower_http::services::ServeDir;
use tracing::info;

pub use config::{ServiceConfig, BIND_ENV, STATIC_ENV, STORE_ENV};
pub use error::{ApiError, ErrorBody};
pub use state::{AppState, DraftSession, SessionStatus};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Embed(#[from] draft_core::embed::EmbedError),
    #[error(transparent)]
    Prompt(#[from] draft_core::prompt::PromptError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Deserialize)]
pub struct DraftRequest {
    pub context: String,
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub mode: Option<InferenceMode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub id: String,
    pub context: String,
    pub decision: String,
    pub score: f64,
}

impl From<RetrievalHit> for Hit {
    fn from(h: RetrievalHit) -> Self {
        Hit {
            id: h.record_id,
            context: h.pair.context,
            decision: h.pair.decision,
            score: h.score,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Usage {
    pub input_tokens: usize,
    pub output_tokens: usize,
    pub latency_ms: u64,
    pub retrieval_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DraftResponse {
    pub session_id: String,
    pub decision: String,
    pub mode: InferenceMode,
    pub k: usize,
    pub hits: Vec<Hit>,
    pub usage: Usage,
    pub backend_id: String,
}

#[derive(Debug, Clone, Deserialize)]
pub struct AcceptRequest {
    pub session_id: String,
    pub final_decision: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcceptResponse {
    pub record_id: String,
    pub store_count: usize,
}

#[derive(Debug, Clone, Deserialize)]
pub struct SearchParams {
    #[serde(default)]
    pub query: String,
    #[serde(default)]
    pub k: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResponse {
    pub hits: Vec<Hit>,
    pub store_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub store_count: usize,
    pub store_version: u64,
    pub backend_id: String,
    pub embedder_profile: String,
    pub sessions: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

fn json_body<T>(body: Result<Json<T>, JsonRejection>) -> Result<T, ApiError> {
    body.map(|Json(t)| t)
        .map_err(|e| ApiError::new(e.status(), "invalid_json", e.body_text()))
}

async fn draft(
    State(state): State<AppState>,
    body: Result<Json<DraftRequest>, JsonRejection>,
) -> Result<Json<DraftResponse>, ApiError> {
    let body = json_body(body)?;
    let mode = body.mode.unwrap_or(state.config().default_mode);
    let k = match mode {
        InferenceMode::ZeroShot => 0,
        _ => body.k.unwrap_or(state.config().default_k),
    };
    if k == 0 && mode != InferenceMode::ZeroShot {
        return Err(ApiError::bad_request("invalid_k", "k must be at least 1"));
    }
    let request = InferenceRequest {
        context: body.context,
        k,
        mode,
        params: state.config().params.clone(),
    };
    let drafter = state.drafter()?;
    // cheap checks first, so invalid input never reaches a backend
    drafter.validate(&request)?;
    let snapshot = state.snapshot();
    if mode != InferenceMode::ZeroShot && snapshot.is_empty() {
        return Err(PipelineError::StoreEmpty.into());
    }
    let req = request.clone();
    let result = tokio::task::spawn_blocking(move || drafter.infer(&req, Some(&snapshot)))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))??;
    let response = DraftResponse {
        session_id: String::new(),
        decision: result.decision.clone(),
        mode,
        k,
        hits: result.hits.iter().cloned().map(Hit::from).collect(),
        usage: Usage {
            input_tokens: result.generation.input_tokens,
            output_tokens: result.generation.output_tokens,
            latency_ms: result.generation.latency_ms,
            retrieval_ms: result.retrieval_ms,
        },
        backend_id: result.generation.backend_id.clone(),
    };
    let session_id = state.insert_session(request, result);
    Ok(Json(DraftResponse { session_id, ..response }))
}

async fn discard(State(state): State<AppState>, Path(session_id): Path<String>) -> Result<StatusCode, ApiError> {
    state.discard(&session_id)?;
    Ok(StatusCode::NO_CONTENT)
}

async fn accept(
    State(state): State<AppState>,
    body: Result<Json<AcceptRequest>, JsonRejection>,
) -> Result<Json<AcceptResponse>, ApiError> {
    let body = json_body(body)?;
    if body.final_decision.trim().is_empty() {
        return Err(ApiError::bad_request("empty_decision", "final_decision is empty"));
    }
    let (record_id, store_count) = state.accept(&body.session_id, body.final_decision).await?;
    Ok(Json(AcceptResponse { record_id, store_count }))
}

async fn search(
    State(state): State<AppState>,
    params: Result<Query<SearchParams>, QueryRejection>,
) -> Result<Json<SearchResponse>, ApiError> {
    let Query(params) = params.map_err(|e| ApiError::bad_request("invalid_query", e.body_text()))?;
    if params.query.trim().is_empty() {
        return Err(ApiError::bad_request("empty_query", "query is empty"));
    }
    let k = params.k.unwrap_or(state.config().default_k);
    if k == 0 {
        return Err(ApiError::bad_request("invalid_k", "k must be at least 1"));
    }
    let snapshot = state.snapshot();
    let store_count = snapshot.len();
    if snapshot.is_empty() {
        return Ok(Json(SearchResponse {
            hits: Vec::new(),
            store_count,
        }));
    }
    let embedder = state.embedder();
    let hits = tokio::task::spawn_blocking(move || -> Result<Vec<RetrievalHit>, ApiError> {
        let q = embedder.embed_text(&params.query)?;
        Ok(snapshot.retrieve_top_k(&q, k, None)?)
    })
    .await
    .map_err(|e| ApiError::internal(e.to_string()))??;
    Ok(Json(SearchResponse {
        hits: hits.into_iter().map(Hit::from).collect(),
        store_count,
    }))
}

async fn health(State(state): State<AppState>) -> Json<HealthResponse> {
    let snapshot = state.snapshot();
    let detail = state.backend_error().map(str::to_string);
    Json(HealthResponse {
        status: if detail.is_some() { "degraded" } else { "ok" }.to_string(),
        store_count: snapshot.len(),
        store_version: snapshot.version(),
        backend_id: state.backend_id().to_string(),
        embedder_profile: snapshot.profile().identifier(),
        sessions: state.session_count(),
        detail,
    })
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such route")
}

fn cors(origins: &[String]) -> CorsLayer {
    let allow = if origins.is_empty() {
        AllowOrigin::any()
    } else {
        AllowOrigin::list(origins.iter().filter_map(|o| HeaderValue::from_str(o).ok()))
    };
    CorsLayer::new()
        .allow_origin(allow)
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([header::CONTENT_TYPE])
}

pub fn router(state: AppState) -> Router {
    let static_dir = state.config().static_dir.clone();
    let api = Router::new()
        .route("/api/draft", post(draft))
        .route("/api/draft/{session_id}/discard", post(discard))
        .route("/api/adrs", post(accept).get(search))
        .route("/api/health", get(health))
        .route("/api/{*rest}", get(not_found).post(not_found));
    let app = match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.fallback(not_found),
    };
    app.layer(DefaultBodyLimit::max(MAX_PAYLOAD_BYTES))
        .layer(cors(&state.config().cors_origins))
        .with_state(state)
}

async fn shutdown_signal() {
    let _ = tokio::signal::ctrl_c().await;
    info!("shutting down");
}

/// Serves until ctrl-c, then compacts the store once more.
pub async fn serve(config: ServiceConfig) -> Result<(), ServiceError> {
    let state = tokio::task::spawn_blocking(move || AppState::open(config))
        .await
        .map_err(|e| ServiceError::Io(std::io::Error::other(e)))??;
    let listener = TcpListener::bind(&state.config().bind).await?;
    info!(addr = %listener.local_addr()?, "listening");
    let maintenance = state.spawn_maintenance();
    axum::serve(listener, router(state.clone()))
        .with_graceful_shutdown(shutdown_signal())
        .await?;
    maintenance.abort();
    state.compact().await?;
    Ok(())
}
