//! Remote embedder and chat backend against a scripted local HTTP server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::mpsc;
use std::thread;
use std::time::Duration;

use draft_core::embed::{EmbedError, Embedder, EmbedderProfile, RemoteEmbedder};
use draft_core::genclient::{
    Backend, BackendProfile, ChatBackend, FailureKind, GenerationParams, Generator, MAX_PAYLOAD_BYTES,
};
use draft_core::prompt::{build_zero_shot_prompt, PromptTemplate};
use draft_core::util::RetryPolicy;

#[derive(Clone)]
enum Reply {
    Json(u16, String),
    Raw(String),
    Hang(Duration),
}

struct Server {
    url: String,
    requests: mpsc::Receiver<String>,
}

fn read_request(stream: &mut TcpStream) -> String {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut len = 0;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
            break;
        }
        if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
            len = v.trim().parse().unwrap();
        }
    }
    let mut body = vec![0; len];
    reader.read_exact(&mut body).unwrap();
    String::from_utf8(body).unwrap()
}

/// Serves `replies` in order, one connection each.
fn serve(replies: Vec<Reply>) -> Server {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/endpoint", listener.local_addr().unwrap());
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        for reply in replies {
            let Ok((mut stream, _)) = listener.accept() else { return };
            let body = read_request(&mut stream);
            let _ = tx.send(body);
            let raw = match reply {
                Reply::Json(status, json) => format!(
                    "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{json}",
                    json.len()
                ),
                Reply::Raw(raw) => raw,
                Reply::Hang(d) => {
                    thread::sleep(d);
                    continue;
                }
            };
            let _ = stream.write_all(raw.as_bytes());
        }
    });
    Server { url, requests: rx }
}

fn no_backoff(attempts: u32) -> RetryPolicy {
    RetryPolicy {
        max_attempts: attempts,
        initial_backoff_ms: 0,
    }
}

fn chat_ok(text: &str) -> Reply {
    Reply::Json(
        200,
        serde_json::json!({
            "choices": [{"message": {"role": "assistant", "content": text}}],
            "usage": {"prompt_tokens": 42, "completion_tokens": 7}
        })
        .to_string(),
    )
}

fn prompt() -> draft_core::prompt::PromptBundle {
    build_zero_shot_prompt("We need a queue.", &PromptTemplate::zeroshot_chat()).unwrap()
}

fn params(timeout_ms: u64) -> GenerationParams {
    GenerationParams {
        model_name: "test-model".into(),
        timeout_ms,
        ..Default::default()
    }
}

#[test]
fn chat_success_uses_reported_usage() {
    let server = serve(vec![chat_ok("We will use RabbitMQ.")]);
    let backend = ChatBackend::new(Some(server.url.clone()), Some("m".into()), no_backoff(1), 2).unwrap();
    let result = Generator::new(std::sync::Arc::new(backend))
        .generate(&prompt(), &params(5000))
        .unwrap();
    assert_eq!(result.text, "We will use RabbitMQ.");
    assert_eq!((result.input_tokens, result.output_tokens), (42, 7));
    assert_eq!(result.backend_id, "chat_completions:m");

    let sent: serde_json::Value = serde_json::from_str(&server.requests.recv().unwrap()).unwrap();
    assert_eq!(sent["model"], "test-model");
    assert_eq!(sent["messages"][0]["role"], "system");
    assert_eq!(sent["messages"][1]["role"], "user");
    assert_eq!(sent["messages"][1]["content"], "We need a queue.");
    // unset sampling parameters are left to the provider
    assert!(sent.get("temperature").is_none() && sent.get("top_p").is_none());
}

#[test]
fn chat_retries_server_errors() {
    let server = serve(vec![Reply::Json(503, "{}".into()), chat_ok("ok")]);
    let backend = ChatBackend::new(Some(server.url.clone()), None, no_backoff(3), 1).unwrap();
    assert_eq!(backend.complete(&prompt(), &params(5000)).unwrap().text, "ok");
    assert_eq!(server.requests.try_iter().count(), 2);
}

#[test]
fn chat_rate_limit_carries_retry_after() {
    let limited = "HTTP/1.1 429 Too Many Requests\r\nretry-after: 2\r\ncontent-length: 0\r\nconnection: close\r\n\r\n";
    let server = serve(vec![Reply::Raw(limited.into()), Reply::Raw(limited.into())]);
    let backend = ChatBackend::new(Some(server.url.clone()), None, no_backoff(2), 1).unwrap();
    let err = backend.complete(&prompt(), &params(5000)).unwrap_err();
    assert_eq!(
        err.kind,
        FailureKind::RateLimited {
            retry_after_ms: Some(2000)
        }
    );
    assert_eq!(err.attempts, 2);
}

#[test]
fn chat_client_errors_are_not_retried() {
    let server = serve(vec![Reply::Json(400, "{\"error\":\"bad\"}".into()), chat_ok("never")]);
    let backend = ChatBackend::new(Some(server.url.clone()), None, no_backoff(3), 1).unwrap();
    let err = backend.complete(&prompt(), &params(5000)).unwrap_err();
    assert_eq!((err.kind, err.attempts), (FailureKind::InvalidRequest, 1));
}

#[test]
fn chat_one_ms_timeout() {
    let server = serve(vec![Reply::Hang(Duration::from_millis(300)); 2]);
    let backend = ChatBackend::new(Some(server.url.clone()), None, no_backoff(2), 1).unwrap();
    let err = Generator::new(std::sync::Arc::new(backend))
        .generate(&prompt(), &params(1))
        .unwrap_err();
    assert_eq!(err.kind, FailureKind::Timeout);
    assert_eq!(err.attempts, 2);
}

#[test]
fn chat_unreachable_and_misconfigured() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let backend = ChatBackend::new(Some(format!("http://127.0.0.1:{port}/")), None, no_backoff(2), 1).unwrap();
    let err = backend.complete(&prompt(), &params(2000)).unwrap_err();
    assert_eq!((err.kind, err.attempts), (FailureKind::BackendUnavailable, 2));

    let profile = BackendProfile::ChatCompletions {
        endpoint: Some("  ".into()),
        model: None,
        retry: RetryPolicy::default(),
        max_in_flight: 1,
    };
    if std::env::var("DRAFT_GEN_ENDPOINT").is_err() {
        assert!(matches!(profile.build(), Err(e) if e.kind == FailureKind::Misconfigured));
    }
}

#[test]
fn chat_oversized_response_is_rejected() {
    let big = "x".repeat(MAX_PAYLOAD_BYTES + 10);
    let server = serve(vec![chat_ok(&big)]);
    let backend = ChatBackend::new(Some(server.url.clone()), None, no_backoff(1), 1).unwrap();
    let err = backend.complete(&prompt(), &params(10_000)).unwrap_err();
    assert_eq!(err.kind, FailureKind::PayloadTooLarge);
}

fn embed_reply(vectors: &[Vec<f32>]) -> Reply {
    let data: Vec<_> = vectors
        .iter()
        .enumerate()
        .map(|(i, v)| serde_json::json!({"index": i, "embedding": v}))
        .collect();
    Reply::Json(200, serde_json::json!({ "data": data }).to_string())
}

fn remote_profile(url: &str, dim: usize) -> EmbedderProfile {
    EmbedderProfile {
        retry: no_backoff(2),
        timeout_ms: 2000,
        ..EmbedderProfile::remote(url, "embed-model", dim)
    }
}

#[test]
fn remote_embedder_normalizes_and_sends_batch() {
    let server = serve(vec![embed_reply(&[vec![3.0, 4.0], vec![0.0, 2.0]])]);
    let e = RemoteEmbedder::new(remote_profile(&server.url, 2)).unwrap();
    let out = e.embed_batch(&["first", "second"]).unwrap();
    assert!((out[0].values()[0] - 0.6).abs() < 1e-6 && (out[0].values()[1] - 0.8).abs() < 1e-6);
    assert_eq!(out[1].values(), &[0.0, 1.0]);
    let sent: serde_json::Value = serde_json::from_str(&server.requests.recv().unwrap()).unwrap();
    assert_eq!(sent["model"], "embed-model");
    assert_eq!(sent["input"], serde_json::json!(["first", "second"]));
}

#[test]
fn remote_embedder_failures() {
    let server = serve(vec![embed_reply(&[vec![1.0, 0.0, 0.0]])]);
    let e = RemoteEmbedder::new(remote_profile(&server.url, 2)).unwrap();
    assert!(matches!(
        e.embed_text("x"),
        Err(EmbedError::DimensionMismatch { expected: 2, actual: 3 })
    ));

    let server = serve(vec![Reply::Json(500, "{}".into()), Reply::Json(500, "{}".into())]);
    let e = RemoteEmbedder::new(remote_profile(&server.url, 2)).unwrap();
    assert!(matches!(
        e.embed_text("x"),
        Err(EmbedError::BackendUnavailable { attempts: 2, .. })
    ));

    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let e = RemoteEmbedder::new(remote_profile(&format!("http://127.0.0.1:{port}/"), 2)).unwrap();
    assert!(matches!(e.embed_text("x"), Err(EmbedError::BackendUnavailable { .. })));
    assert!(matches!(e.embed_batch(&["ok", ""]), Err(EmbedError::EmptyInput)));
}
