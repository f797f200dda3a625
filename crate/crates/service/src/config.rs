use std::fs;
use std::path::{Path, PathBuf};

use draft_core::embed::EmbedderProfile;
use draft_core::genclient::{BackendProfile, GenerationParams};
use draft_core::pipeline::{DraftSettings, InferenceMode};
use draft_core::prompt::DEFAULT_RAG_K;
use serde::{Deserialize, Serialize};

use crate::ServiceError;

pub const BIND_ENV: &str = "DRAFT_BIND";
pub const STORE_ENV: &str = "DRAFT_STORE_PATH";
pub const STATIC_ENV: &str = "DRAFT_STATIC_DIR";

fn default_bind() -> String {
    "127.0.0.1:8080".into()
}

fn default_mode() -> InferenceMode {
    InferenceMode::DraftFewshot
}

fn default_k() -> usize {
    DEFAULT_RAG_K
}

fn default_ttl() -> u64 {
    3600
}

fn default_compaction() -> u64 {
    300
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceConfig {
    #[serde(default = "default_bind")]
    pub bind: String,
    pub store_path: PathBuf,
    pub backend: BackendProfile,
    /// Used to create a store when `store_path` holds none; an existing
    /// store must agree with it.
    #[serde(default)]
    pub embedder: Option<EmbedderProfile>,
    #[serde(default = "default_mode")]
    pub default_mode: InferenceMode,
    #[serde(default = "default_k")]
    pub default_k: usize,
    #[serde(default)]
    pub params: GenerationParams,
    #[serde(default)]
    pub draft: DraftSettings,
    #[serde(default)]
    pub templates_path: Option<PathBuf>,
    #[serde(default = "default_ttl")]
    pub session_ttl_secs: u64,
    /// Zero disables periodic compaction.
    #[serde(default = "default_compaction")]
    pub compaction_interval_secs: u64,
    /// Allowed CORS origins; empty allows any.
    #[serde(default)]
    pub cors_origins: Vec<String>,
    #[serde(default)]
    pub static_dir: Option<PathBuf>,
}

impl ServiceConfig {
    pub fn new(store_path: impl Into<PathBuf>, backend: BackendProfile) -> Self {
        ServiceConfig {
            bind: default_bind(),
            store_path: store_path.into(),
            backend,
            embedder: None,
            default_mode: default_mode(),
            default_k: default_k(),
            params: GenerationParams::default(),
            draft: DraftSettings::default(),
            templates_path: None,
            session_ttl_secs: default_ttl(),
            compaction_interval_secs: default_compaction(),
            cors_origins: Vec::new(),
            static_dir: None,
        }
    }

    /// Reads a JSON config, resolves relative paths against its directory,
    /// then applies environment overrides.
    pub fn load(path: &Path) -> Result<Self, ServiceError> {
        let text = fs::read_to_string(path).map_err(|e| ServiceError::Config(format!("{}: {e}", path.display())))?;
        let mut config: ServiceConfig =
            serde_json::from_str(&text).map_err(|e| ServiceError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut config.store_path);
        if let Some(p) = config.templates_path.as_mut() {
            resolve(p);
        }
        if let Some(p) = config.static_dir.as_mut() {
            resolve(p);
        }
        config.apply_env();
        Ok(config)
    }

    pub fn apply_env(&mut self) {
        if let Ok(v) = std::env::var(BIND_ENV) {
            self.bind = v;
        }
        if let Ok(v) = std::env::var(STORE_ENV) {
            self.store_path = v.into();
        }
        if let Ok(v) = std::env::var(STATIC_ENV) {
            self.static_dir = Some(v.into());
        }
    }
}
