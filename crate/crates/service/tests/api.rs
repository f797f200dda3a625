use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use draft_core::corpus::{AdrRecord, AdrTemplate, Corpus};
use draft_core::embed::HashedEmbedder;
use draft_core::genclient::BackendProfile;
use draft_core::util::RetryPolicy;
use draft_core::vstore::{index_corpus, VectorStore};
use draft_service::{router, AppState, ServiceConfig};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

fn records() -> Vec<AdrRecord> {
    [
        (
            "db",
            "We need a relational database for order data.",
            "We will use Postgres.",
        ),
        (
            "test",
            "We need a testing framework for the React frontend.",
            "We will use Jest.",
        ),
        (
            "pkg",
            "Lock files keep changing between developer machines.",
            "We will use Yarn.",
        ),
    ]
    .iter()
    .map(|(id, c, d)| AdrRecord {
        id: id.to_string(),
        context: c.to_string(),
        decision: d.to_string(),
        source_uri: format!("{id}.md"),
        template: AdrTemplate::Nygard,
    })
    .collect()
}

fn seeded_store(dir: &std::path::Path) {
    let e = HashedEmbedder::new(128).unwrap();
    index_corpus(&Corpus::from_records(records()).unwrap(), &e)
        .unwrap()
        .save(dir)
        .unwrap();
}

fn config(dir: &std::path::Path, backend: BackendProfile) -> ServiceConfig {
    ServiceConfig::new(dir, backend)
}

fn app(state: &AppState) -> Router {
    router(state.clone())
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap()
    };
    (status, value)
}

fn assert_error(body: &Value, code: &str) {
    assert_eq!(body["error"], code, "{body}");
    assert!(body["message"].is_string());
    assert_eq!(body.as_object().unwrap().len(), 2);
}

#[tokio::test]
async fn draft_returns_decision_and_hits() {
    let dir = tempfile::tempdir().unwrap();
    seeded_store(dir.path());
    let state = AppState::open(config(dir.path(), BackendProfile::MockEcho)).unwrap();
    let app = app(&state);
    let (status, body) = call(
        &app,
        "POST",
        "/api/draft",
        Some(json!({"context": "We need a relational database for order data.", "k": 2})),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["decision"], "We will use Postgres.");
    let hits = body["hits"].as_array().unwrap();
    assert_eq!(hits.len(), 2);
    assert_eq!(hits[0]["id"], "db");
    assert!(body["session_id"].as_str().is_some_and(|s| !s.is_empty()));
    assert!(body["usage"]["input_tokens"].as_u64().unwrap() > 0);

    let (status, body) = call(
        &app,
        "POST",
        "/api/draft",
        Some(json!({"context": "x", "mode": "zero_shot"})),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["decision"], "NO-SHOT");
    assert_eq!(body["hits"], json!([]));
}

#[tokio::test]
async fn draft_validation_errors() {
    let dir = tempfile::tempdir().unwrap();
    seeded_store(dir.path());
    let state = AppState::open(config(dir.path(), BackendProfile::MockEcho)).unwrap();
    let app = app(&state);
    let long = vec!["word"; 501].join(" ");
    let (status, body) = call(&app, "POST", "/api/draft", Some(json!({ "context": long }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_error(&body, "context_too_long");

    let (status, body) = call(&app, "POST", "/api/draft", Some(json!({"context": "  "}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_error(&body, "empty_context");

    let (status, body) = call(
        &app,
        "POST",
        "/api/draft",
        Some(json!({"context": "a", "mode": "bogus"})),
    )
    .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_error(&body, "invalid_json");

    let (status, body) = call(&app, "POST", "/api/draft", Some(json!({"context": "a", "k": 0}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_error(&body, "invalid_k");

    let (status, body) = call(&app, "GET", "/api/nope", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_error(&body, "not_found");
}

#[tokio::test]
async fn empty_store_conflicts_for_rag() {
    let dir = tempfile::tempdir().unwrap();
    let state = AppState::open(config(&dir.path().join("fresh"), BackendProfile::MockEcho)).unwrap();
    let app = app(&state);
    let (status, body) = call(
        &app,
        "POST",
        "/api/draft",
        Some(json!({"context": "anything", "mode": "rag_fewshot"})),
    )
    .await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_error(&body, "store_empty");
    let (status, body) = call(&app, "GET", "/api/adrs?query=anything", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["hits"], json!([]));
}

#[tokio::test]
async fn accept_write_back_and_restart() {
    let dir = tempfile::tempdir().unwrap();
    seeded_store(dir.path());
    let context = "Our CI pipeline needs a container registry close to the build agents.";
    let edited = "We will run a private Harbor registry next to the CI agents.";
    let record_id = {
        let state = AppState::open(config(dir.path(), BackendProfile::MockEcho)).unwrap();
        let app = app(&state);
        let (_, health) = call(&app, "GET", "/api/health", None).await;
        assert_eq!(health["store_count"], 3);
        assert_eq!(health["status"], "ok");

        let (_, draft) = call(&app, "POST", "/api/draft", Some(json!({ "context": context }))).await;
        let sid = draft["session_id"].as_str().unwrap().to_string();
        let (status, accepted) = call(
            &app,
            "POST",
            "/api/adrs",
            Some(json!({"session_id": sid, "final_decision": edited})),
        )
        .await;
        assert_eq!(status, StatusCode::OK, "{accepted}");
        assert_eq!(accepted["store_count"], 4);

        let (status, body) = call(
            &app,
            "POST",
            "/api/adrs",
            Some(json!({"session_id": sid, "final_decision": edited})),
        )
        .await;
        assert_eq!(status, StatusCode::CONFLICT);
        assert_error(&body, "already_accepted");

        let (_, health) = call(&app, "GET", "/api/health", None).await;
        assert_eq!(health["store_count"], 4);

        // the live snapshot already serves the new record
        let (_, again) = call(&app, "POST", "/api/draft", Some(json!({ "context": context }))).await;
        assert_eq!(again["hits"][0]["id"], accepted["record_id"]);
        assert_eq!(again["hits"][0]["decision"], edited);
        accepted["record_id"].as_str().unwrap().to_string()
        // state dropped here without compaction, like a crash
    };

    let state = AppState::open(config(dir.path(), BackendProfile::MockEcho)).unwrap();
    let app = app(&state);
    let (_, health) = call(&app, "GET", "/api/health", None).await;
    assert_eq!(health["store_count"], 4);
    let q = context.replace(' ', "%20");
    let (_, found) = call(&app, "GET", &format!("/api/adrs?query={q}&k=1"), None).await;
    assert_eq!(found["hits"][0]["id"], record_id);
    assert_eq!(found["hits"][0]["decision"], edited);

    assert!(state.compact().await.unwrap());
    assert!(!state.compact().await.unwrap());
    assert_eq!(VectorStore::load(dir.path(), None).unwrap().len(), 4);
}

#[tokio::test]
async fn unknown_and_discarded_sessions() {
    let dir = tempfile::tempdir().unwrap();
    seeded_store(dir.path());
    let state = AppState::open(config(dir.path(), BackendProfile::MockEcho)).unwrap();
    let app = app(&state);
    let (status, body) = call(
        &app,
        "POST",
        "/api/adrs",
        Some(json!({"session_id": "nope", "final_decision": "x"})),
    )
    .await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_error(&body, "unknown_session");

    let (_, draft) = call(&app, "POST", "/api/draft", Some(json!({"context": "Pick a database"}))).await;
    let sid = draft["session_id"].as_str().unwrap();
    let (status, body) = call(
        &app,
        "POST",
        "/api/adrs",
        Some(json!({"session_id": sid, "final_decision": " "})),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_error(&body, "empty_decision");
    let (status, _) = call(&app, "POST", &format!("/api/draft/{sid}/discard"), None).await;
    assert_eq!(status, StatusCode::NO_CONTENT);
    let (status, body) = call(
        &app,
        "POST",
        "/api/adrs",
        Some(json!({"session_id": sid, "final_decision": "x"})),
    )
    .await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_error(&body, "session_discarded");
}

#[tokio::test]
async fn expired_sessions_are_unknown() {
    let dir = tempfile::tempdir().unwrap();
    seeded_store(dir.path());
    let mut cfg = config(dir.path(), BackendProfile::MockEcho);
    cfg.session_ttl_secs = 0;
    let state = AppState::open(cfg).unwrap();
    let app = app(&state);
    let (_, draft) = call(&app, "POST", "/api/draft", Some(json!({"context": "Pick a database"}))).await;
    tokio::time::sleep(std::time::Duration::from_millis(5)).await;
    let sid = draft["session_id"].as_str().unwrap();
    let (status, _) = call(
        &app,
        "POST",
        "/api/adrs",
        Some(json!({"session_id": sid, "final_decision": "x"})),
    )
    .await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(state.session_count(), 0);
}

#[tokio::test]
async fn search_is_read_only() {
    let dir = tempfile::tempdir().unwrap();
    seeded_store(dir.path());
    let state = AppState::open(config(dir.path(), BackendProfile::MockEcho)).unwrap();
    let app = app(&state);
    let version = state.snapshot().version();
    let q = "We%20need%20a%20testing%20framework%20for%20the%20React%20frontend.";
    let (status, body) = call(&app, "GET", &format!("/api/adrs?query={q}&k=2"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["hits"][0]["id"], "test");
    assert!((body["hits"][0]["score"].as_f64().unwrap() - 1.0).abs() < 1e-6);

    let (_, body) = call(&app, "GET", &format!("/api/adrs?query={q}&k=50"), None).await;
    assert_eq!(body["hits"].as_array().unwrap().len(), 3);
    let (status, body) = call(&app, "GET", &format!("/api/adrs?query={q}&k=0"), None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_error(&body, "invalid_k");
    let (status, body) = call(&app, "GET", "/api/adrs?query=", None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_error(&body, "empty_query");
    call(&app, "POST", "/api/draft", Some(json!({"context": "Pick a database"}))).await;
    call(&app, "GET", "/api/health", None).await;
    assert_eq!(state.snapshot().version(), version);
}

#[tokio::test]
async fn misconfigured_backend_is_degraded() {
    let dir = tempfile::tempdir().unwrap();
    seeded_store(dir.path());
    let backend = BackendProfile::ChatCompletions {
        endpoint: Some(String::new()),
        model: None,
        retry: RetryPolicy::default(),
        max_in_flight: 1,
    };
    if std::env::var("DRAFT_GEN_ENDPOINT").is_ok() {
        return;
    }
    let state = AppState::open(config(dir.path(), backend)).unwrap();
    let app = app(&state);
    let (_, health) = call(&app, "GET", "/api/health", None).await;
    assert_eq!(health["status"], "degraded");
    assert_eq!(health["store_count"], 3);
    let (status, body) = call(&app, "POST", "/api/draft", Some(json!({"context": "x"}))).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    assert_error(&body, "backend_misconfigured");
    // retrieval still works without a generator
    let (status, _) = call(&app, "GET", "/api/adrs?query=database", None).await;
    assert_eq!(status, StatusCode::OK);
}

#[tokio::test]
async fn unreachable_backend_maps_to_bad_gateway() {
    let dir = tempfile::tempdir().unwrap();
    seeded_store(dir.path());
    let port = std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let backend = BackendProfile::ChatCompletions {
        endpoint: Some(format!("http://127.0.0.1:{port}/")),
        model: Some("m".into()),
        retry: RetryPolicy {
            max_attempts: 1,
            initial_backoff_ms: 0,
        },
        max_in_flight: 1,
    };
    let cfg = config(dir.path(), backend);
    let state = tokio::task::spawn_blocking(move || AppState::open(cfg))
        .await
        .unwrap()
        .unwrap();
    let (status, body) = call(&app(&state), "POST", "/api/draft", Some(json!({"context": "x"}))).await;
    assert_eq!(status, StatusCode::BAD_GATEWAY);
    assert_error(&body, "backend_unavailable");
}

#[tokio::test]
async fn cors_preflight_is_allowed() {
    let dir = tempfile::tempdir().unwrap();
    seeded_store(dir.path());
    let state = AppState::open(config(dir.path(), BackendProfile::MockEcho)).unwrap();
    let req = Request::builder()
        .method("OPTIONS")
        .uri("/api/draft")
        .header("origin", "http://localhost:5173")
        .header("access-control-request-method", "POST")
        .body(Body::empty())
        .unwrap();
    let resp = app(&state).oneshot(req).await.unwrap();
    assert!(resp.headers().contains_key("access-control-allow-origin"));
}
