//! Embeddings over the common `{"model","input"} -> {"data":[{"embedding"}]}` HTTP shape.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use tracing::{debug, warn};

use crate::util::InFlightLimit;

use super::{EmbedError, Embedder, EmbedderProfile, EmbeddingVector};

pub const EMBED_API_KEY_ENV: &str = "DRAFT_EMBED_API_KEY";

/// Inputs per HTTP request.
const BATCH: usize = 64;

#[derive(Serialize)]
struct EmbedRequest<'a> {
    model: &'a str,
    input: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbedResponse {
    data: Vec<EmbedDatum>,
}

#[derive(Deserialize)]
struct EmbedDatum {
    embedding: Vec<f64>,
}

pub struct RemoteEmbedder {
    profile: EmbedderProfile,
    endpoint: String,
    model: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
    limit: InFlightLimit,
}

impl std::fmt::Debug for RemoteEmbedder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteEmbedder")
            .field("endpoint", &self.endpoint)
            .field("model", &self.model)
            .finish_non_exhaustive()
    }
}

enum Failure {
    Retryable(String),
    Fatal(EmbedError),
}

impl RemoteEmbedder {
    pub fn new(profile: EmbedderProfile) -> Result<Self, EmbedError> {
        profile.validate()?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(profile.timeout_ms.max(1)))
            .build()
            .map_err(|e| EmbedError::InvalidProfile(e.to_string()))?;
        Ok(RemoteEmbedder {
            endpoint: profile.endpoint.clone().unwrap_or_default(),
            model: profile.model_name.clone().unwrap_or_default(),
            api_key: std::env::var(EMBED_API_KEY_ENV).ok().filter(|k| !k.is_empty()),
            limit: InFlightLimit::new(profile.max_in_flight),
            client,
            profile,
        })
    }

    fn request_once(&self, input: &[&str]) -> Result<Vec<EmbeddingVector>, Failure> {
        let _slot = self.limit.acquire();
        let mut req = self.client.post(&self.endpoint).json(&EmbedRequest {
            model: &self.model,
            input,
        });
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| Failure::Retryable(e.to_string()))?;
        let status = resp.status();
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(Failure::Retryable(format!("HTTP {status}")));
        }
        if !status.is_success() {
            return Err(Failure::Fatal(EmbedError::BackendUnavailable {
                attempts: 1,
                message: format!("HTTP {status}"),
            }));
        }
        let body: EmbedResponse = resp
            .json()
            .map_err(|e| Failure::Retryable(format!("malformed response: {e}")))?;
        if body.data.len() != input.len() {
            return Err(Failure::Fatal(EmbedError::BackendUnavailable {
                attempts: 1,
                message: format!("expected {} embeddings, got {}", input.len(), body.data.len()),
            }));
        }
        body.data
            .into_iter()
            .map(|d| {
                if d.embedding.len() != self.profile.dim {
                    return Err(Failure::Fatal(EmbedError::DimensionMismatch {
                        expected: self.profile.dim,
                        actual: d.embedding.len(),
                    }));
                }
                // re-normalize regardless of what the provider claims
                EmbeddingVector::from_f64(&d.embedding).map_err(Failure::Fatal)
            })
            .collect()
    }

    fn request(&self, input: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        let policy = self.profile.retry;
        let mut last = String::new();
        for attempt in 1..=policy.attempts() {
            std::thread::sleep(policy.backoff_before(attempt));
            match self.request_once(input) {
                Ok(v) => return Ok(v),
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Retryable(msg)) => {
                    warn!(attempt, endpoint = %self.endpoint, "embedding request failed");
                    last = msg;
                }
            }
        }
        Err(EmbedError::BackendUnavailable {
            attempts: policy.attempts(),
            message: last,
        })
    }
}

impl Embedder for RemoteEmbedder {
    fn profile(&self) -> &EmbedderProfile {
        &self.profile
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        if texts.iter().any(|t| t.trim().is_empty()) {
            return Err(EmbedError::EmptyInput);
        }
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(BATCH) {
            debug!(n = chunk.len(), "embedding batch");
            out.extend(self.request(chunk)?);
        }
        Ok(out)
    }
}
