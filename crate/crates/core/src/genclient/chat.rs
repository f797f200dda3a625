//! Chat-completions client: `{"model","messages":[{"role","content"}]}` in,
//! `{"choices":[{"message":{"content"}}],"usage":{..}}` out.

use std::io::Read;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use tracing::{debug, warn};

use crate::prompt::PromptBundle;
use crate::util::{InFlightLimit, RetryPolicy};

use super::{Backend, Completion, FailureKind, GenError, GenerationParams};

pub const GEN_API_KEY_ENV: &str = "DRAFT_GEN_API_KEY";
pub const GEN_ENDPOINT_ENV: &str = "DRAFT_GEN_ENDPOINT";

/// Cap on request and response bodies.
pub const MAX_PAYLOAD_BYTES: usize = 1 << 20;

#[derive(Serialize)]
struct Message<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: Vec<Message<'a>>,
    max_tokens: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    temperature: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    top_p: Option<f64>,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct Usage {
    prompt_tokens: Option<usize>,
    completion_tokens: Option<usize>,
}

pub struct ChatBackend {
    endpoint: String,
    model: Option<String>,
    api_key: Option<String>,
    retry: RetryPolicy,
    limit: InFlightLimit,
    client: reqwest::blocking::Client,
}

impl std::fmt::Debug for ChatBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ChatBackend")
            .field("endpoint", &self.endpoint)
            .field("model", &self.model)
            .finish_non_exhaustive()
    }
}

struct Attempt {
    kind: FailureKind,
    message: String,
    retryable: bool,
}

impl Attempt {
    fn retry(kind: FailureKind, message: impl Into<String>) -> Self {
        Attempt {
            kind,
            message: message.into(),
            retryable: true,
        }
    }

    fn fatal(kind: FailureKind, message: impl Into<String>) -> Self {
        Attempt {
            kind,
            message: message.into(),
            retryable: false,
        }
    }
}

impl ChatBackend {
    pub fn new(
        endpoint: Option<String>,
        model: Option<String>,
        retry: RetryPolicy,
        max_in_flight: usize,
    ) -> Result<Self, GenError> {
        let endpoint = endpoint
            .or_else(|| std::env::var(GEN_ENDPOINT_ENV).ok())
            .filter(|e| !e.trim().is_empty())
            .ok_or_else(|| {
                GenError::new(
                    FailureKind::Misconfigured,
                    format!("no endpoint configured and {GEN_ENDPOINT_ENV} unset"),
                )
            })?;
        let client = reqwest::blocking::Client::builder()
            .build()
            .map_err(|e| GenError::new(FailureKind::Misconfigured, e.to_string()))?;
        Ok(ChatBackend {
            endpoint,
            model,
            api_key: std::env::var(GEN_API_KEY_ENV).ok().filter(|k| !k.is_empty()),
            retry,
            limit: InFlightLimit::new(max_in_flight),
            client,
        })
    }

    fn model_for<'a>(&'a self, params: &'a GenerationParams) -> &'a str {
        if !params.model_name.is_empty() {
            &params.model_name
        } else {
            self.model.as_deref().unwrap_or("default")
        }
    }

    fn attempt(&self, body: &[u8], timeout: Duration) -> Result<Completion, Attempt> {
        let _slot = self.limit.acquire();
        let mut req = self
            .client
            .post(&self.endpoint)
            .timeout(timeout)
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(body.to_vec());
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| {
            if e.is_timeout() {
                Attempt::retry(FailureKind::Timeout, e.to_string())
            } else {
                Attempt::retry(FailureKind::BackendUnavailable, e.to_string())
            }
        })?;
        let status = resp.status();
        if status.as_u16() == 429 {
            let retry_after_ms = resp
                .headers()
                .get(reqwest::header::RETRY_AFTER)
                .and_then(|v| v.to_str().ok())
                .and_then(|v| v.trim().parse::<u64>().ok())
                .map(|s| s * 1000);
            return Err(Attempt::retry(FailureKind::RateLimited { retry_after_ms }, "HTTP 429"));
        }
        if status.is_server_error() {
            return Err(Attempt::retry(
                FailureKind::BackendUnavailable,
                format!("HTTP {status}"),
            ));
        }
        if !status.is_success() {
            return Err(Attempt::fatal(FailureKind::InvalidRequest, format!("HTTP {status}")));
        }
        let mut raw = Vec::new();
        resp.take(MAX_PAYLOAD_BYTES as u64 + 1)
            .read_to_end(&mut raw)
            .map_err(|e| {
                if e.kind() == std::io::ErrorKind::TimedOut || e.to_string().contains("timed out") {
                    Attempt::retry(FailureKind::Timeout, e.to_string())
                } else {
                    Attempt::retry(FailureKind::BackendUnavailable, e.to_string())
                }
            })?;
        if raw.len() > MAX_PAYLOAD_BYTES {
            return Err(Attempt::fatal(FailureKind::PayloadTooLarge, "response exceeds 1 MB"));
        }
        let parsed: ChatResponse = serde_json::from_slice(&raw)
            .map_err(|e| Attempt::retry(FailureKind::BackendUnavailable, format!("malformed response: {e}")))?;
        let text = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| Attempt::retry(FailureKind::BackendUnavailable, "response has no choices"))?;
        let usage = parsed.usage;
        Ok(Completion {
            text,
            input_tokens: usage.as_ref().and_then(|u| u.prompt_tokens),
            output_tokens: usage.as_ref().and_then(|u| u.completion_tokens),
        })
    }
}

impl Backend for ChatBackend {
    fn backend_id(&self) -> String {
        format!("chat_completions:{}", self.model.as_deref().unwrap_or("default"))
    }

    fn complete(&self, prompt: &PromptBundle, params: &GenerationParams) -> Result<Completion, GenError> {
        let mut messages = Vec::with_capacity(2);
        if let Some(system) = &prompt.system {
            messages.push(Message {
                role: "system",
                content: system,
            });
        }
        messages.push(Message {
            role: "user",
            content: &prompt.text,
        });
        let body = serde_json::to_vec(&ChatRequest {
            model: self.model_for(params),
            messages,
            max_tokens: params.max_output_tokens,
            temperature: params.temperature,
            top_p: params.top_p,
        })
        .map_err(|e| GenError::new(FailureKind::InvalidRequest, e.to_string()))?;
        if body.len() > MAX_PAYLOAD_BYTES {
            return Err(GenError::new(FailureKind::PayloadTooLarge, "request exceeds 1 MB"));
        }
        let timeout = Duration::from_millis(params.timeout_ms.max(1));
        let attempts = self.retry.attempts();
        let mut last = Attempt::retry(FailureKind::BackendUnavailable, "no attempt made");
        for attempt in 1..=attempts {
            std::thread::sleep(self.retry.backoff_before(attempt));
            debug!(attempt, bytes = body.len(), "chat completion request");
            match self.attempt(&body, timeout) {
                Ok(c) => return Ok(c),
                Err(a) => {
                    warn!(attempt, kind = %a.kind, "chat completion failed");
                    let stop = !a.retryable;
                    last = a;
                    if stop {
                        return Err(GenError {
                            kind: last.kind,
                            attempts: attempt,
                            latency_ms: 0,
                            message: last.message,
                        });
                    }
                }
            }
        }
        Err(GenError {
            kind: last.kind,
            attempts,
            latency_ms: 0,
            message: last.message,
        })
    }
}
