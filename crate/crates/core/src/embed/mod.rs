//! Unit-norm text embeddings and cosine similarity.

mod hashed;
mod remote;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{segment, TokenizerProfile};
use crate::util::RetryPolicy;

pub use hashed::HashedEmbedder;
pub use remote::{RemoteEmbedder, EMBED_API_KEY_ENV};

pub const DEFAULT_DIM: usize = 256;

/// Stored vectors must be unit length within this tolerance.
pub const NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("cannot embed empty input")]
    EmptyInput,
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("embedding backend unavailable after {attempts} attempt(s): {message}")]
    BackendUnavailable { attempts: u32, message: String },
    #[error("invalid embedder profile: {0}")]
    InvalidProfile(String),
    #[error("vector has zero norm or non-finite components")]
    Degenerate,
}

/// A fixed-dimension vector normalized to unit L2 norm on construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f32>", into = "Vec<f32>")]
pub struct EmbeddingVector {
    values: Vec<f32>,
}

fn l2_norm(values: &[f32]) -> f64 {
    values.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt()
}

impl EmbeddingVector {
    /// Normalizes `values`. Fails on empty, all-zero, or non-finite input.
    pub fn new(values: Vec<f32>) -> Result<Self, EmbedError> {
        if values.is_empty() || values.iter().any(|x| !x.is_finite()) {
            return Err(EmbedError::Degenerate);
        }
        let norm = l2_norm(&values);
        if norm == 0.0 || !norm.is_finite() {
            return Err(EmbedError::Degenerate);
        }
        let values = values.into_iter().map(|x| (f64::from(x) / norm) as f32).collect();
        Ok(EmbeddingVector { values })
    }

    pub fn from_f64(values: &[f64]) -> Result<Self, EmbedError> {
        if values.iter().any(|x| !x.is_finite()) {
            return Err(EmbedError::Degenerate);
        }
        let norm = values.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(EmbedError::Degenerate);
        }
        EmbeddingVector::new(values.iter().map(|x| (x / norm) as f32).collect())
    }

    /// Accepts already-normalized values verbatim, so reloaded vectors stay
    /// bit-identical. Rejects anything outside [`NORM_TOLERANCE`].
    pub fn from_unit(values: Vec<f32>) -> Result<Self, EmbedError> {
        if values.is_empty() || values.iter().any(|x| !x.is_finite()) {
            return Err(EmbedError::Degenerate);
        }
        if (l2_norm(&values) - 1.0).abs() > NORM_TOLERANCE {
            return Err(EmbedError::Degenerate);
        }
        Ok(EmbeddingVector { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.values)
    }
}

impl TryFrom<Vec<f32>> for EmbeddingVector {
    type Error = EmbedError;

    fn try_from(values: Vec<f32>) -> Result<Self, EmbedError> {
        EmbeddingVector::from_unit(values)
    }
}

impl From<EmbeddingVector> for Vec<f32> {
    fn from(v: EmbeddingVector) -> Vec<f32> {
        v.values
    }
}

/// Dot product of two unit vectors, accumulated in f64 and clamped to [-1, 1].
pub fn cosine(u: &EmbeddingVector, v: &EmbeddingVector) -> Result<f64, EmbedError> {
    if u.dim() != v.dim() {
        return Err(EmbedError::DimensionMismatch {
            expected: u.dim(),
            actual: v.dim(),
        });
    }
    Ok(dot(u.values(), v.values()).clamp(-1.0, 1.0))
}

pub(crate) fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedderKind {
    RemoteApi,
    HashedLocal,
}

fn default_timeout_ms() -> u64 {
    30_000
}

fn default_max_in_flight() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedderProfile {
    pub kind: EmbedderKind,
    pub dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_name: Option<String>,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
}

impl Default for EmbedderProfile {
    fn default() -> Self {
        EmbedderProfile::hashed_local(DEFAULT_DIM)
    }
}

impl EmbedderProfile {
    pub fn hashed_local(dim: usize) -> Self {
        EmbedderProfile {
            kind: EmbedderKind::HashedLocal,
            dim,
            endpoint: None,
            model_name: None,
            retry: RetryPolicy::default(),
            timeout_ms: default_timeout_ms(),
            max_in_flight: default_max_in_flight(),
        }
    }

    pub fn remote(endpoint: impl Into<String>, model_name: impl Into<String>, dim: usize) -> Self {
        EmbedderProfile {
            kind: EmbedderKind::RemoteApi,
            endpoint: Some(endpoint.into()),
            model_name: Some(model_name.into()),
            ..EmbedderProfile::hashed_local(dim)
        }
    }

    pub fn validate(&self) -> Result<(), EmbedError> {
        if self.dim == 0 {
            return Err(EmbedError::InvalidProfile("dim must be positive".into()));
        }
        if self.kind == EmbedderKind::RemoteApi && (self.endpoint.is_none() || self.model_name.is_none()) {
            return Err(EmbedError::InvalidProfile(
                "remote_api requires endpoint and model_name".into(),
            ));
        }
        Ok(())
    }

    /// Short identifier recorded in reports and manifests.
    pub fn identifier(&self) -> String {
        match self.kind {
            EmbedderKind::HashedLocal => format!("hashed_local/fnv1a64/d{}", self.dim),
            EmbedderKind::RemoteApi => {
                format!("remote_api/{}/d{}", self.model_name.as_deref().unwrap_or("?"), self.dim)
            }
        }
    }

    pub fn build(&self) -> Result<Arc<dyn Embedder>, EmbedError> {
        self.validate()?;
        Ok(match self.kind {
            EmbedderKind::HashedLocal => Arc::new(HashedEmbedder::new(self.dim)?),
            EmbedderKind::RemoteApi => Arc::new(RemoteEmbedder::new(self.clone())?),
        })
    }
}

impl fmt::Display for EmbedderProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.identifier())
    }
}

/// Embedding backend. Implementations must return unit vectors of `profile().dim`.
pub trait Embedder: Send + Sync {
    fn profile(&self) -> &EmbedderProfile;

    /// Embeds every text; any empty text fails the whole batch.
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError>;

    fn embed_text(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        let mut out = self.embed_batch(&[text])?;
        out.pop().ok_or(EmbedError::EmptyInput)
    }

    /// One vector per token of the default segmentation.
    fn embed_tokens(&self, text: &str) -> Result<Vec<EmbeddingVector>, EmbedError> {
        let tokens: Vec<&str> = segment(text, TokenizerProfile::WordPunct).collect();
        if tokens.is_empty() {
            return Err(EmbedError::EmptyInput);
        }
        self.embed_batch(&tokens)
    }
}

pub fn embed_text(text: &str, profile: &EmbedderProfile) -> Result<EmbeddingVector, EmbedError> {
    profile.build()?.embed_text(text)
}

pub fn embed_tokens(text: &str, profile: &EmbedderProfile) -> Result<Vec<EmbeddingVector>, EmbedError> {
    profile.build()?.embed_tokens(text)
}
