//! Vector database of (context embedding, Context–Decision pair) entries with
//! exact top-k cosine retrieval.

mod disk;

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{AdrRecord, ContextDecisionPair, Corpus, CorpusError};
use crate::embed::{dot, EmbedError, Embedder, EmbedderProfile, EmbeddingVector};

pub use disk::{append_record, MAGIC};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("cannot index an empty corpus")]
    EmptyCorpus,
    #[error("vector store is empty")]
    EmptyStore,
    #[error("k must be at least 1")]
    InvalidK,
    #[error("dimension mismatch: store has {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("record id {0:?} already present")]
    DuplicateId(String),
    #[error("embedding record {record_id:?}: {source}")]
    Embed {
        record_id: String,
        #[source]
        source: EmbedError,
    },
    #[error("embedder profile {found} does not match store profile {expected}")]
    ProfileMismatch { expected: String, found: String },
    #[error("corrupt store: {0}")]
    Format(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoreEntry {
    pub record: AdrRecord,
    pub vector: EmbeddingVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalHit {
    pub record_id: String,
    pub pair: ContextDecisionPair,
    pub score: f64,
}

/// Immutable snapshot. [`VectorStore::insert`] returns a new snapshot and
/// leaves the receiver untouched; entries are shared between snapshots.
#[derive(Debug, Clone)]
pub struct VectorStore {
    dim: usize,
    profile: EmbedderProfile,
    entries: Vec<Arc<StoreEntry>>,
    ids: HashMap<String, usize>,
    version: u64,
    reads: Arc<AtomicU64>,
}

impl PartialEq for VectorStore {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim && self.profile == other.profile && self.entries == other.entries
    }
}

impl VectorStore {
    /// An empty store for `profile`.
    pub fn empty(profile: EmbedderProfile) -> Self {
        VectorStore {
            dim: profile.dim,
            profile,
            entries: Vec::new(),
            ids: HashMap::new(),
            version: 0,
            reads: Arc::new(AtomicU64::new(0)),
        }
    }

    /// Builds a store from precomputed entries, checking dims and id uniqueness.
    pub fn from_entries(profile: EmbedderProfile, entries: Vec<StoreEntry>) -> Result<Self, StoreError> {
        let mut store = VectorStore::empty(profile);
        for e in entries {
            store.push_entry(e)?;
        }
        Ok(store)
    }

    fn push_entry(&mut self, entry: StoreEntry) -> Result<(), StoreError> {
        if entry.vector.dim() != self.dim {
            return Err(StoreError::DimensionMismatch {
                expected: self.dim,
                actual: entry.vector.dim(),
            });
        }
        if self.ids.contains_key(&entry.record.id) {
            return Err(StoreError::DuplicateId(entry.record.id));
        }
        self.ids.insert(entry.record.id.clone(), self.entries.len());
        self.entries.push(Arc::new(entry));
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn profile(&self) -> &EmbedderProfile {
        &self.profile
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl ExactSizeIterator<Item = &StoreEntry> {
        self.entries.iter().map(|e| e.as_ref())
    }

    pub fn get(&self, id: &str) -> Option<&StoreEntry> {
        self.ids.get(id).map(|&i| self.entries[i].as_ref())
    }

    pub fn contains(&self, id: &str) -> bool {
        self.ids.contains_key(id)
    }

    pub fn records(&self) -> Vec<AdrRecord> {
        self.entries.iter().map(|e| e.record.clone()).collect()
    }

    /// Incremented once per successful insert.
    pub fn version(&self) -> u64 {
        self.version
    }

    /// Number of retrieval calls served by this snapshot lineage.
    pub fn read_count(&self) -> u64 {
        self.reads.load(Ordering::Relaxed)
    }

    /// Exact top-k by cosine, score descending, ties by insertion order.
    pub fn retrieve_top_k(
        &self,
        query: &EmbeddingVector,
        k: usize,
        exclude_id: Option<&str>,
    ) -> Result<Vec<RetrievalHit>, StoreError> {
        self.reads.fetch_add(1, Ordering::Relaxed);
        if k == 0 {
            return Err(StoreError::InvalidK);
        }
        if query.dim() != self.dim {
            return Err(StoreError::DimensionMismatch {
                expected: self.dim,
                actual: query.dim(),
            });
        }
        if self.entries.is_empty() {
            return Err(StoreError::EmptyStore);
        }
        let mut scored: Vec<(usize, f64)> = self
            .entries
            .iter()
            .enumerate()
            .filter(|(_, e)| exclude_id != Some(e.record.id.as_str()))
            .map(|(i, e)| (i, dot(query.values(), e.vector.values()).clamp(-1.0, 1.0)))
            .collect();
        // stable: equal scores keep insertion order
        scored.sort_by(|a, b| b.1.total_cmp(&a.1));
        scored.truncate(k);
        Ok(scored
            .into_iter()
            .map(|(i, score)| {
                let e = &self.entries[i];
                RetrievalHit {
                    record_id: e.record.id.clone(),
                    pair: e.record.pair(),
                    score,
                }
            })
            .collect())
    }

    /// Embeds and appends `record`, returning the new snapshot.
    pub fn insert(&self, record: AdrRecord, embedder: &dyn Embedder) -> Result<VectorStore, StoreError> {
        if self.contains(&record.id) {
            return Err(StoreError::DuplicateId(record.id));
        }
        self.check_profile(embedder)?;
        let vector = embedder
            .embed_text(&record.context)
            .map_err(|source| StoreError::Embed {
                record_id: record.id.clone(),
                source,
            })?;
        self.insert_entry(StoreEntry { record, vector })
    }

    pub fn insert_entry(&self, entry: StoreEntry) -> Result<VectorStore, StoreError> {
        let mut next = self.clone();
        next.push_entry(entry)?;
        next.version += 1;
        Ok(next)
    }

    fn check_profile(&self, embedder: &dyn Embedder) -> Result<(), StoreError> {
        let theirs = embedder.profile();
        if theirs.kind != self.profile.kind
            || theirs.dim != self.profile.dim
            || theirs.model_name != self.profile.model_name
        {
            return Err(StoreError::ProfileMismatch {
                expected: self.profile.identifier(),
                found: theirs.identifier(),
            });
        }
        Ok(())
    }
}

/// Embeds every context in corpus order.
pub fn index_corpus(corpus: &Corpus, embedder: &dyn Embedder) -> Result<VectorStore, StoreError> {
    if corpus.is_empty() {
        return Err(StoreError::EmptyCorpus);
    }
    let entries = embed_records(corpus.records(), embedder)?;
    VectorStore::from_entries(embedder.profile().clone(), entries)
}

/// Same as [`index_corpus`], building the embedder from `profile`.
pub fn index_corpus_with_profile(corpus: &Corpus, profile: &EmbedderProfile) -> Result<VectorStore, StoreError> {
    let embedder = profile.build().map_err(|source| StoreError::Embed {
        record_id: String::new(),
        source,
    })?;
    index_corpus(corpus, embedder.as_ref())
}

pub(crate) fn embed_records(records: &[AdrRecord], embedder: &dyn Embedder) -> Result<Vec<StoreEntry>, StoreError> {
    records
        .par_iter()
        .map(|r| {
            let vector = embedder.embed_text(&r.context).map_err(|source| StoreError::Embed {
                record_id: r.id.clone(),
                source,
            })?;
            Ok(StoreEntry {
                record: r.clone(),
                vector,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::AdrTemplate;
    use crate::embed::HashedEmbedder;

    fn rec(id: &str, ctx: &str) -> AdrRecord {
        AdrRecord {
            id: id.into(),
            context: ctx.into(),
            decision: format!("decision for {id}"),
            source_uri: "mem".into(),
            template: AdrTemplate::Unknown,
        }
    }

    fn toy() -> VectorStore {
        let vecs: [[f32; 2]; 4] = [[1.0, 0.0], [0.0, 1.0], [0.6, 0.8], [-1.0, 0.0]];
        let entries = vecs
            .iter()
            .enumerate()
            .map(|(i, v)| StoreEntry {
                record: rec(&format!("id{}", i + 1), "x"),
                vector: EmbeddingVector::new(v.to_vec()).unwrap(),
            })
            .collect();
        VectorStore::from_entries(EmbedderProfile::hashed_local(2), entries).unwrap()
    }

    #[test]
    fn hand_computed_toy_order() {
        let store = toy();
        let q = EmbeddingVector::new(vec![1.0, 0.0]).unwrap();
        let hits = store.retrieve_top_k(&q, 4, None).unwrap();
        let got: Vec<_> = hits.iter().map(|h| (h.record_id.as_str(), h.score)).collect();
        assert_eq!(got[0], ("id1", 1.0));
        assert_eq!(got[1].0, "id3");
        assert!((got[1].1 - 0.6).abs() < 1e-6);
        assert_eq!(got[2], ("id2", 0.0));
        assert_eq!(got[3], ("id4", -1.0));
    }

    #[test]
    fn k_is_clamped_and_exclusion_applies() {
        let store = toy();
        let q = EmbeddingVector::new(vec![1.0, 0.0]).unwrap();
        assert_eq!(store.retrieve_top_k(&q, 10, None).unwrap().len(), 4);
        let hits = store.retrieve_top_k(&q, 10, Some("id1")).unwrap();
        assert_eq!(hits.len(), 3);
        assert_eq!(hits[0].record_id, "id3");
    }

    #[test]
    fn retrieval_errors() {
        let store = toy();
        let q = EmbeddingVector::new(vec![1.0, 0.0]).unwrap();
        assert!(matches!(store.retrieve_top_k(&q, 0, None), Err(StoreError::InvalidK)));
        let q3 = EmbeddingVector::new(vec![1.0, 0.0, 0.0]).unwrap();
        assert!(matches!(
            store.retrieve_top_k(&q3, 1, None),
            Err(StoreError::DimensionMismatch { expected: 2, actual: 3 })
        ));
        let empty = VectorStore::empty(EmbedderProfile::hashed_local(2));
        assert!(matches!(empty.retrieve_top_k(&q, 1, None), Err(StoreError::EmptyStore)));
    }

    #[test]
    fn ties_break_by_insertion_order() {
        let v = EmbeddingVector::new(vec![1.0, 1.0]).unwrap();
        let entries = (0..5)
            .map(|i| StoreEntry {
                record: rec(&format!("t{i}"), "x"),
                vector: v.clone(),
            })
            .collect();
        let store = VectorStore::from_entries(EmbedderProfile::hashed_local(2), entries).unwrap();
        let hits = store.retrieve_top_k(&v, 3, None).unwrap();
        let ids: Vec<_> = hits.iter().map(|h| h.record_id.as_str()).collect();
        assert_eq!(ids, ["t0", "t1", "t2"]);
    }

    #[test]
    fn index_and_self_retrieval() {
        let e = HashedEmbedder::new(256).unwrap();
        let corpus = Corpus::from_records(vec![
            rec("a", "we need a test framework"),
            rec("b", "which package manager should we use"),
            rec("c", "database choice for analytics"),
        ])
        .unwrap();
        let store = index_corpus(&corpus, &e).unwrap();
        assert_eq!(store.len(), 3);
        let ids: Vec<_> = store.entries().map(|x| x.record.id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
        let q = e.embed_text("which package manager should we use").unwrap();
        let hits = store.retrieve_top_k(&q, 1, None).unwrap();
        assert_eq!(hits[0].record_id, "b");
        assert!((hits[0].score - 1.0).abs() < 1e-6);
    }

    #[test]
    fn empty_corpus_cannot_be_indexed() {
        let e = HashedEmbedder::new(8).unwrap();
        let corpus = Corpus::from_records(vec![]).unwrap();
        assert!(matches!(index_corpus(&corpus, &e), Err(StoreError::EmptyCorpus)));
    }

    #[test]
    fn insert_is_copy_on_write() {
        let e = HashedEmbedder::new(64).unwrap();
        let corpus = Corpus::from_records(vec![rec("a", "alpha beta"), rec("b", "gamma delta")]).unwrap();
        let before = index_corpus(&corpus, &e).unwrap();
        let after = before.insert(rec("n", "brand new context words"), &e).unwrap();
        assert_eq!(before.len(), 2);
        assert_eq!(after.len(), 3);
        assert_eq!(after.version(), before.version() + 1);
        let q = e.embed_text("brand new context words").unwrap();
        assert_eq!(after.retrieve_top_k(&q, 1, None).unwrap()[0].record_id, "n");
        assert!(matches!(
            after.insert(rec("a", "dup"), &e),
            Err(StoreError::DuplicateId(id)) if id == "a"
        ));
    }

    #[test]
    fn insert_rejects_foreign_embedder() {
        let store = VectorStore::empty(EmbedderProfile::hashed_local(64));
        let other = HashedEmbedder::new(32).unwrap();
        assert!(matches!(
            store.insert(rec("a", "x"), &other),
            Err(StoreError::ProfileMismatch { .. })
        ));
    }
}
