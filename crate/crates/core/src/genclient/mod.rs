//! Generation backends behind one interface.
//!
//! Two deterministic mocks ship in-tree (`mock_echo`, `mock_constant`) next to
//! a chat-completions HTTP client. [`Generator`] measures latency and fills
//! in token usage the backend did not report.

mod chat;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Clock;
use crate::corpus::{count_tokens, TokenizerProfile};
use crate::prompt::PromptBundle;
use crate::util::RetryPolicy;

pub use chat::{ChatBackend, GEN_API_KEY_ENV, GEN_ENDPOINT_ENV, MAX_PAYLOAD_BYTES};

/// Text returned by `mock_echo` for prompts without shots.
pub const NO_SHOT: &str = "NO-SHOT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum FailureKind {
    BackendUnavailable,
    Timeout,
    RateLimited { retry_after_ms: Option<u64> },
    InvalidRequest,
    PayloadTooLarge,
    Misconfigured,
}

impl fmt::Display for FailureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FailureKind::BackendUnavailable => "backend unavailable",
            FailureKind::Timeout => "timeout",
            FailureKind::RateLimited { .. } => "rate limited",
            FailureKind::InvalidRequest => "invalid request",
            FailureKind::PayloadTooLarge => "payload too large",
            FailureKind::Misconfigured => "backend misconfigured",
        })
    }
}

/// A failed generation. Carries the attempts made and the wall-clock time spent.
#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("{kind} after {attempts} attempt(s), {latency_ms} ms: {message}")]
pub struct GenError {
    pub kind: FailureKind,
    pub attempts: u32,
    pub latency_ms: u64,
    pub message: String,
}

impl GenError {
    pub fn new(kind: FailureKind, message: impl Into<String>) -> Self {
        GenError {
            kind,
            attempts: 0,
            latency_ms: 0,
            message: message.into(),
        }
    }
}

fn default_max_output_tokens() -> u32 {
    512
}

fn default_timeout_ms() -> u64 {
    60_000
}

/// `temperature` and `top_p` left unset are omitted from requests, so the
/// provider's defaults apply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    #[serde(default)]
    pub model_name: String,
    #[serde(default = "default_max_output_tokens")]
    pub max_output_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_p: Option<f64>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
}

impl Default for GenerationParams {
    fn default() -> Self {
        GenerationParams {
            model_name: String::new(),
            max_output_tokens: default_max_output_tokens(),
            temperature: None,
            top_p: None,
            timeout_ms: default_timeout_ms(),
        }
    }
}

impl GenerationParams {
    pub fn validate(&self) -> Result<(), GenError> {
        let bad = |m: &str| Err(GenError::new(FailureKind::InvalidRequest, m));
        if self.max_output_tokens == 0 {
            return bad("max_output_tokens must be positive");
        }
        if self.temperature.is_some_and(|t| t.is_nan() || t < 0.0) {
            return bad("temperature must be >= 0");
        }
        if self.top_p.is_some_and(|p| p.is_nan() || p <= 0.0 || p > 1.0) {
            return bad("top_p must be in (0, 1]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationResult {
    pub text: String,
    pub input_tokens: usize,
    pub output_tokens: usize,
    pub latency_ms: u64,
    pub backend_id: String,
}

/// What a backend returns before timing and usage accounting.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub text: String,
    pub input_tokens: Option<usize>,
    pub output_tokens: Option<usize>,
}

pub trait Backend: Send + Sync {
    fn backend_id(&self) -> String;

    /// `attempts` and `latency_ms` of a returned error are filled in by [`Generator`]
    /// when left at zero.
    fn complete(&self, prompt: &PromptBundle, params: &GenerationParams) -> Result<Completion, GenError>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct MockEcho;

impl Backend for MockEcho {
    fn backend_id(&self) -> String {
        "mock_echo".into()
    }

    fn complete(&self, prompt: &PromptBundle, _: &GenerationParams) -> Result<Completion, GenError> {
        let text = prompt
            .shots
            .first()
            .map_or_else(|| NO_SHOT.to_string(), |s| s.decision.clone());
        Ok(Completion {
            text,
            input_tokens: None,
            output_tokens: None,
        })
    }
}

#[derive(Debug, Clone)]
pub struct MockConstant {
    pub text: String,
}

impl Backend for MockConstant {
    fn backend_id(&self) -> String {
        "mock_constant".into()
    }

    fn complete(&self, _: &PromptBundle, _: &GenerationParams) -> Result<Completion, GenError> {
        Ok(Completion {
            text: self.text.clone(),
            input_tokens: None,
            output_tokens: None,
        })
    }
}

fn default_in_flight() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum BackendProfile {
    MockEcho,
    MockConstant {
        text: String,
    },
    ChatCompletions {
        /// Full URL of the chat-completions endpoint; falls back to `DRAFT_GEN_ENDPOINT`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        endpoint: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        model: Option<String>,
        #[serde(default)]
        retry: RetryPolicy,
        #[serde(default = "default_in_flight")]
        max_in_flight: usize,
    },
}

impl BackendProfile {
    pub fn build(&self) -> Result<Arc<dyn Backend>, GenError> {
        Ok(match self {
            BackendProfile::MockEcho => Arc::new(MockEcho),
            BackendProfile::MockConstant { text } => Arc::new(MockConstant { text: text.clone() }),
            BackendProfile::ChatCompletions {
                endpoint,
                model,
                retry,
                max_in_flight,
            } => Arc::new(ChatBackend::new(
                endpoint.clone(),
                model.clone(),
                *retry,
                *max_in_flight,
            )?),
        })
    }
}

/// A backend plus the clock used to time it.
#[derive(Clone)]
pub struct Generator {
    backend: Arc<dyn Backend>,
    clock: Clock,
}

impl fmt::Debug for Generator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Generator")
            .field("backend", &self.backend.backend_id())
            .field("clock", &self.clock)
            .finish()
    }
}

impl Generator {
    pub fn new(backend: Arc<dyn Backend>) -> Self {
        Generator {
            backend,
            clock: Clock::System,
        }
    }

    pub fn from_profile(profile: &BackendProfile) -> Result<Self, GenError> {
        Ok(Generator::new(profile.build()?))
    }

    pub fn with_clock(mut self, clock: Clock) -> Self {
        self.clock = clock;
        self
    }

    pub fn backend_id(&self) -> String {
        self.backend.backend_id()
    }

    pub fn generate(&self, prompt: &PromptBundle, params: &GenerationParams) -> Result<GenerationResult, GenError> {
        params.validate()?;
        if prompt.text.trim().is_empty() {
            return Err(GenError::new(FailureKind::InvalidRequest, "empty prompt"));
        }
        let watch = self.clock.start();
        let outcome = self.backend.complete(prompt, params);
        let latency_ms = watch.elapsed_ms();
        match outcome {
            Ok(c) => Ok(GenerationResult {
                input_tokens: c
                    .input_tokens
                    .unwrap_or_else(|| count_tokens(&prompt.full_text(), TokenizerProfile::WordPunct)),
                output_tokens: c
                    .output_tokens
                    .unwrap_or_else(|| count_tokens(&c.text, TokenizerProfile::WordPunct)),
                text: c.text,
                latency_ms,
                backend_id: self.backend.backend_id(),
            }),
            Err(mut e) => {
                e.latency_ms = latency_ms;
                e.attempts = e.attempts.max(1);
                Err(e)
            }
        }
    }
}

/// One-shot convenience over [`Generator`].
pub fn generate(
    prompt: &PromptBundle,
    params: &GenerationParams,
    backend: &BackendProfile,
) -> Result<GenerationResult, GenError> {
    Generator::from_profile(backend)?.generate(prompt, params)
}
