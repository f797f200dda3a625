#![allow(dead_code)]

use std::collections::HashMap;
use std::path::PathBuf;

use draft_core::corpus::{AdrRecord, AdrTemplate};
use draft_core::embed::{EmbedError, Embedder, EmbedderProfile, EmbeddingVector};
use serde::Deserialize;

#[derive(Debug, Deserialize)]
pub struct Shot {
    pub id: String,
    pub context: String,
    pub decision: String,
}

#[derive(Debug, Deserialize)]
pub struct PromptBox {
    pub shots: Vec<Shot>,
    pub query_context: String,
    #[serde(default)]
    pub target_decision: Option<String>,
    #[serde(skip)]
    pub expected: String,
}

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

/// `which` is "training" or "inference".
pub fn prompt_box(which: &str) -> PromptBox {
    let json = std::fs::read_to_string(fixture(&format!("sample_{which}_pairs.json"))).unwrap();
    let mut b: PromptBox = serde_json::from_str(&json).unwrap();
    b.expected = std::fs::read_to_string(fixture(&format!("sample_{which}_prompt.txt"))).unwrap();
    b
}

pub fn record(id: &str, context: &str, decision: &str) -> AdrRecord {
    AdrRecord {
        id: id.into(),
        context: context.into(),
        decision: decision.into(),
        source_uri: format!("fixture/{id}.md"),
        template: AdrTemplate::Nygard,
    }
}

/// Embeds known texts to fixed vectors, so tests can pin a retrieval order.
pub struct LookupEmbedder {
    profile: EmbedderProfile,
    table: HashMap<String, EmbeddingVector>,
}

impl LookupEmbedder {
    pub fn new(entries: &[(&str, &[f32])]) -> Self {
        let dim = entries[0].1.len();
        LookupEmbedder {
            profile: EmbedderProfile::hashed_local(dim),
            table: entries
                .iter()
                .map(|(t, v)| (t.to_string(), EmbeddingVector::new(v.to_vec()).unwrap()))
                .collect(),
        }
    }
}

impl Embedder for LookupEmbedder {
    fn profile(&self) -> &EmbedderProfile {
        &self.profile
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        texts
            .iter()
            .map(|t| {
                self.table
                    .get(*t)
                    .cloned()
                    .ok_or_else(|| EmbedError::InvalidProfile(format!("no vector for {t:?}")))
            })
            .collect()
    }
}
