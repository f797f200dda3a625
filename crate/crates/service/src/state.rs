use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, Instant};

use draft_core::clock::Clock;
use draft_core::corpus::{AdrRecord, AdrTemplate};
use draft_core::embed::Embedder;
use draft_core::genclient::Generator;
use draft_core::pipeline::{Drafter, InferenceRequest, InferenceResult};
use draft_core::prompt::TemplateSet;
use draft_core::vstore::{append_record, StoreEntry, VectorStore};
use serde::Serialize;
use tracing::{info, warn};

use crate::config::ServiceConfig;
use crate::error::ApiError;
use crate::ServiceError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case", tag = "status")]
pub enum SessionStatus {
    Generated,
    Accepted { record_id: String },
    Discarded,
}

#[derive(Debug, Clone, Serialize)]
pub struct DraftSession {
    pub session_id: String,
    pub request: InferenceRequest,
    pub result: InferenceResult,
    pub created_at: String,
    #[serde(skip)]
    pub created: Instant,
    #[serde(flatten)]
    pub status: SessionStatus,
}

struct Inner {
    config: ServiceConfig,
    store: RwLock<Arc<VectorStore>>,
    /// Entry count covered by the last full save.
    persisted: AtomicUsize,
    writer: tokio::sync::Mutex<()>,
    sessions: Mutex<HashMap<String, DraftSession>>,
    backends: Option<Backends>,
    backend_id: String,
    backend_error: Option<String>,
    clock: Clock,
}

struct Backends {
    embedder: Arc<dyn Embedder>,
    drafter: Option<Drafter>,
}

impl Drop for Inner {
    // Remote clients own a private runtime that must not be dropped on an
    // async worker thread.
    fn drop(&mut self) {
        if let Some(b) = self.backends.take() {
            let _ = std::thread::spawn(move || drop(b)).join();
        }
    }
}

/// Shared service state. Readers work on an immutable store snapshot;
/// writes are serialized and swap in a new snapshot.
#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

impl AppState {
    /// Loads the store under `config.store_path`, creating an empty one when
    /// the directory holds none. A backend that fails to build leaves the
    /// service running in a degraded state. Remote backends build blocking
    /// clients, so call this outside async code (e.g. in `spawn_blocking`).
    pub fn open(config: ServiceConfig) -> Result<Self, ServiceError> {
        Self::open_with_clock(config, Clock::System)
    }

    pub fn open_with_clock(config: ServiceConfig, clock: Clock) -> Result<Self, ServiceError> {
        let dir = &config.store_path;
        let store = if dir.join("manifest.json").exists() {
            let store = VectorStore::load(dir, None)?;
            if let Some(p) = &config.embedder {
                if p.identifier() != store.profile().identifier() {
                    return Err(ServiceError::Config(format!(
                        "store was built with {} but config names {}",
                        store.profile().identifier(),
                        p.identifier()
                    )));
                }
            }
            store
        } else {
            let store = VectorStore::empty(config.embedder.clone().unwrap_or_default());
            store.save(dir)?;
            store
        };
        let persisted = VectorStore::indexed_count(dir)?;
        let embedder = store.profile().build()?;
        let templates = match &config.templates_path {
            Some(p) => TemplateSet::load(p)?,
            None => TemplateSet::default(),
        };
        let (drafter, backend_id, backend_error) = match Generator::from_profile(&config.backend) {
            Ok(g) => {
                let id = g.backend_id();
                let d = Drafter::new(embedder.clone(), g)
                    .with_templates(templates)
                    .with_settings(config.draft.clone())
                    .with_clock(clock.clone());
                (Some(d), id, None)
            }
            Err(e) => {
                warn!(error = %e, "generation backend unavailable; serving degraded");
                (None, "unavailable".to_string(), Some(e.to_string()))
            }
        };
        info!(store = %dir.display(), count = store.len(), backend = %backend_id, "store loaded");
        Ok(AppState {
            inner: Arc::new(Inner {
                config,
                store: RwLock::new(Arc::new(store)),
                persisted: AtomicUsize::new(persisted),
                writer: tokio::sync::Mutex::new(()),
                sessions: Mutex::new(HashMap::new()),
                backends: Some(Backends { embedder, drafter }),
                backend_id,
                backend_error,
                clock,
            }),
        })
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.inner.config
    }

    pub fn snapshot(&self) -> Arc<VectorStore> {
        self.inner.store.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    fn backends(&self) -> &Backends {
        self.inner.backends.as_ref().expect("backends live until drop")
    }

    pub fn embedder(&self) -> Arc<dyn Embedder> {
        self.backends().embedder.clone()
    }

    pub fn drafter(&self) -> Result<Drafter, ApiError> {
        self.backends().drafter.clone().ok_or_else(|| {
            ApiError::new(
                axum::http::StatusCode::SERVICE_UNAVAILABLE,
                "backend_misconfigured",
                self.inner.backend_error.clone().unwrap_or_default(),
            )
        })
    }

    pub fn backend_id(&self) -> &str {
        &self.inner.backend_id
    }

    pub fn backend_error(&self) -> Option<&str> {
        self.inner.backend_error.as_deref()
    }

    pub fn clock(&self) -> &Clock {
        &self.inner.clock
    }

    fn ttl(&self) -> Duration {
        Duration::from_secs(self.inner.config.session_ttl_secs)
    }

    fn sessions(&self) -> std::sync::MutexGuard<'_, HashMap<String, DraftSession>> {
        self.inner.sessions.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn session_count(&self) -> usize {
        self.sessions().len()
    }

    pub fn insert_session(&self, request: InferenceRequest, result: InferenceResult) -> String {
        let session_id = uuid::Uuid::new_v4().simple().to_string();
        let session = DraftSession {
            session_id: session_id.clone(),
            request,
            result,
            created_at: self.inner.clock.timestamp(),
            created: Instant::now(),
            status: SessionStatus::Generated,
        };
        self.sessions().insert(session_id.clone(), session);
        session_id
    }

    /// Looks up a live session, dropping it if its TTL has passed.
    pub fn session(&self, id: &str) -> Option<DraftSession> {
        let ttl = self.ttl();
        let mut sessions = self.sessions();
        if sessions.get(id).is_some_and(|s| s.created.elapsed() > ttl) {
            sessions.remove(id);
        }
        sessions.get(id).cloned()
    }

    pub fn purge_sessions(&self) -> usize {
        let ttl = self.ttl();
        let mut sessions = self.sessions();
        let before = sessions.len();
        sessions.retain(|_, s| s.created.elapsed() <= ttl);
        before - sessions.len()
    }

    fn generated_session(&self, id: &str) -> Result<DraftSession, ApiError> {
        let s = self
            .session(id)
            .ok_or_else(|| ApiError::new(axum::http::StatusCode::NOT_FOUND, "unknown_session", "no such session"))?;
        match &s.status {
            SessionStatus::Generated => Ok(s),
            SessionStatus::Accepted { record_id } => Err(ApiError::new(
                axum::http::StatusCode::CONFLICT,
                "already_accepted",
                format!("session already accepted as {record_id}"),
            )),
            SessionStatus::Discarded => Err(ApiError::new(
                axum::http::StatusCode::CONFLICT,
                "session_discarded",
                "session was discarded",
            )),
        }
    }

    fn set_status(&self, id: &str, status: SessionStatus) {
        if let Some(s) = self.sessions().get_mut(id) {
            s.status = status;
        }
    }

    pub fn discard(&self, id: &str) -> Result<(), ApiError> {
        self.generated_session(id)?;
        self.set_status(id, SessionStatus::Discarded);
        Ok(())
    }

    /// Persists the session's context with `final_decision` and inserts it
    /// into the live store. The record is on disk before this returns.
    pub async fn accept(&self, session_id: &str, final_decision: String) -> Result<(String, usize), ApiError> {
        let _writer = self.inner.writer.lock().await;
        let session = self.generated_session(session_id)?;
        let record = AdrRecord {
            id: format!("accepted/{session_id}#0"),
            context: session.request.context.clone(),
            decision: final_decision,
            source_uri: format!("accepted/{session_id}"),
            template: AdrTemplate::Unknown,
        };
        let record_id = record.id.clone();
        let snapshot = self.snapshot();
        let embedder = self.embedder();
        let dir = self.inner.config.store_path.clone();
        let grown = tokio::task::spawn_blocking(move || -> Result<VectorStore, ApiError> {
            let vector = embedder.embed_text(&record.context)?;
            if snapshot.contains(&record.id) {
                return Err(ApiError::new(
                    axum::http::StatusCode::CONFLICT,
                    "already_accepted",
                    "record exists",
                ));
            }
            append_record(&dir, &record)?;
            Ok(snapshot.insert_entry(StoreEntry { record, vector })?)
        })
        .await
        .map_err(|e| ApiError::internal(e.to_string()))??;
        let count = grown.len();
        *self.inner.store.write().unwrap_or_else(|e| e.into_inner()) = Arc::new(grown);
        self.set_status(
            session_id,
            SessionStatus::Accepted {
                record_id: record_id.clone(),
            },
        );
        info!(record_id = %record_id, store_count = count, "accepted decision");
        Ok((record_id, count))
    }

    /// Rewrites the vector file when records were appended since the last
    /// save. Returns whether anything was written.
    pub async fn compact(&self) -> Result<bool, ServiceError> {
        let _writer = self.inner.writer.lock().await;
        let snapshot = self.snapshot();
        if snapshot.len() == self.inner.persisted.load(Ordering::SeqCst) {
            return Ok(false);
        }
        let dir = self.inner.config.store_path.clone();
        let len = snapshot.len();
        tokio::task::spawn_blocking(move || snapshot.save(&dir))
            .await
            .map_err(|e| ServiceError::Io(std::io::Error::other(e)))??;
        self.inner.persisted.store(len, Ordering::SeqCst);
        info!(count = len, "compacted store");
        Ok(true)
    }

    pub fn store_path(&self) -> &Path {
        &self.inner.config.store_path
    }

    /// Purges expired sessions every minute and compacts on the configured interval.
    pub fn spawn_maintenance(&self) -> tokio::task::JoinHandle<()> {
        let state = self.clone();
        tokio::spawn(async move {
            let every = state.inner.config.compaction_interval_secs;
            let mut tick = tokio::time::interval(Duration::from_secs(60));
            let mut last_compaction = Instant::now();
            loop {
                tick.tick().await;
                state.purge_sessions();
                if every > 0 && last_compaction.elapsed() >= Duration::from_secs(every) {
                    last_compaction = Instant::now();
                    if let Err(e) = state.compact().await {
                        warn!(error = %e, "compaction failed");
                    }
                }
            }
        })
    }
}
