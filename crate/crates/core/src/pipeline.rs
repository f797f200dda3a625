//! Offline training-set export and online inference.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Clock;
use crate::corpus::{count_tokens, AdrRecord, Corpus, TokenizerProfile, DEFAULT_TOKEN_LIMIT};
use crate::embed::{EmbedError, Embedder};
use crate::genclient::{GenError, GenerationParams, GenerationResult, Generator};
use crate::prompt::{
    build_fewshot_prompt, build_zero_shot_prompt, PromptBundle, PromptError, PromptTemplate, TemplateId, TemplateSet,
    DEFAULT_BUDGET,
};
use crate::util::seeded_subset;
use crate::vstore::{RetrievalHit, StoreError, VectorStore};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("context is empty")]
    EmptyContext,
    #[error("context has {tokens} tokens; limit is {limit}")]
    ContextTooLong { tokens: usize, limit: usize },
    #[error("vector store is empty")]
    StoreEmpty,
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Generation(#[from] GenError),
    #[error("record {record_id:?}: {source}")]
    Record {
        record_id: String,
        #[source]
        source: Box<PipelineError>,
    },
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub prompt: String,
    pub target: String,
    pub source_id: String,
    pub shot_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportOptions {
    pub budget: usize,
    /// Fraction of train records sampled, in (0, 1].
    pub sample_fraction: f64,
    pub seed: u64,
}

impl Default for ExportOptions {
    fn default() -> Self {
        ExportOptions {
            budget: DEFAULT_BUDGET,
            sample_fraction: 1.0,
            seed: 0,
        }
    }
}

fn sample_indices(n: usize, fraction: f64, seed: u64) -> Result<Vec<usize>, PipelineError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(PipelineError::InvalidRequest(format!(
            "sample_fraction {fraction} outside (0, 1]"
        )));
    }
    if fraction >= 1.0 {
        return Ok((0..n).collect());
    }
    let take = ((n as f64) * fraction).round().max(1.0) as usize;
    Ok(seeded_subset(n, take, seed))
}

/// One example per (sampled) train record. Each record is excluded from its
/// own retrieval, so its decision never appears among its shots.
pub fn export_training_dataset(
    train: &Corpus,
    store: &VectorStore,
    embedder: &dyn Embedder,
    k: usize,
    template: &PromptTemplate,
    options: &ExportOptions,
) -> Result<Vec<TrainingExample>, PipelineError> {
    if k == 0 {
        return Err(StoreError::InvalidK.into());
    }
    let picked = sample_indices(train.len(), options.sample_fraction, options.seed)?;
    picked
        .par_iter()
        .map(|&i| {
            let record = &train.records()[i];
            export_one(record, store, embedder, k, template, options.budget).map_err(|source| PipelineError::Record {
                record_id: record.id.clone(),
                source: Box::new(source),
            })
        })
        .collect()
}

fn export_one(
    record: &AdrRecord,
    store: &VectorStore,
    embedder: &dyn Embedder,
    k: usize,
    template: &PromptTemplate,
    budget: usize,
) -> Result<TrainingExample, PipelineError> {
    let query = match store.get(&record.id) {
        Some(entry) if entry.record.context == record.context => entry.vector.clone(),
        _ => embedder.embed_text(&record.context)?,
    };
    let hits = store.retrieve_top_k(&query, k, Some(&record.id))?;
    let bundle = build_fewshot_prompt(&hits, &record.context, template, budget)?;
    Ok(TrainingExample {
        prompt: bundle.text,
        target: record.decision.clone(),
        source_id: record.id.clone(),
        shot_ids: bundle.shot_ids,
    })
}

pub fn write_training_jsonl(path: &Path, examples: &[TrainingExample]) -> Result<(), PipelineError> {
    let io = |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io)?;
    }
    let mut w = BufWriter::new(fs::File::create(path).map_err(io)?);
    for ex in examples {
        serde_json::to_writer(&mut w, ex).map_err(|e| io(e.into()))?;
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InferenceMode {
    ZeroShot,
    RagFewshot,
    DraftFewshot,
}

impl std::fmt::Display for InferenceMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            InferenceMode::ZeroShot => "zero_shot",
            InferenceMode::RagFewshot => "rag_fewshot",
            InferenceMode::DraftFewshot => "draft_fewshot",
        })
    }
}

impl std::str::FromStr for InferenceMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "zero_shot" => Ok(InferenceMode::ZeroShot),
            "rag_fewshot" => Ok(InferenceMode::RagFewshot),
            "draft_fewshot" => Ok(InferenceMode::DraftFewshot),
            other => Err(format!("unknown mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceRequest {
    pub context: String,
    pub k: usize,
    pub mode: InferenceMode,
    #[serde(default)]
    pub params: GenerationParams,
}

impl InferenceRequest {
    pub fn new(context: impl Into<String>, mode: InferenceMode, k: usize) -> Self {
        InferenceRequest {
            context: context.into(),
            k: if mode == InferenceMode::ZeroShot { 0 } else { k },
            mode,
            params: GenerationParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceResult {
    pub decision: String,
    pub hits: Vec<RetrievalHit>,
    pub generation: GenerationResult,
    pub prompt: PromptBundle,
    /// Embedding plus retrieval time; zero for zero-shot requests.
    pub retrieval_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DraftSettings {
    pub token_limit: usize,
    pub prompt_budget: usize,
    pub zero_shot_template: TemplateId,
}

impl Default for DraftSettings {
    fn default() -> Self {
        DraftSettings {
            token_limit: DEFAULT_TOKEN_LIMIT,
            prompt_budget: DEFAULT_BUDGET,
            zero_shot_template: TemplateId::ZeroshotChat,
        }
    }
}

/// The online component. `rag_fewshot` and `draft_fewshot` share one path
/// and differ only in which generator the caller configured.
#[derive(Clone)]
pub struct Drafter {
    embedder: Arc<dyn Embedder>,
    generator: Generator,
    templates: TemplateSet,
    settings: DraftSettings,
    clock: Clock,
}

impl std::fmt::Debug for Drafter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Drafter")
            .field("embedder", &self.embedder.profile().identifier())
            .field("generator", &self.generator)
            .field("settings", &self.settings)
            .finish()
    }
}

impl Drafter {
    pub fn new(embedder: Arc<dyn Embedder>, generator: Generator) -> Self {
        Drafter {
            embedder,
            generator,
            templates: TemplateSet::default(),
            settings: DraftSettings::default(),
            clock: Clock::System,
        }
    }

    pub fn with_templates(mut self, templates: TemplateSet) -> Self {
        self.templates = templates;
        self
    }

    pub fn with_settings(mut self, settings: DraftSettings) -> Self {
        self.settings = settings;
        self
    }

    /// Applies `clock` to retrieval timing and to the generator.
    pub fn with_clock(mut self, clock: Clock) -> Self {
        self.generator = self.generator.with_clock(clock.clone());
        self.clock = clock;
        self
    }

    pub fn settings(&self) -> &DraftSettings {
        &self.settings
    }

    pub fn embedder(&self) -> &Arc<dyn Embedder> {
        &self.embedder
    }

    pub fn generator(&self) -> &Generator {
        &self.generator
    }

    /// Checks the request against the context limit without touching any backend.
    pub fn validate(&self, request: &InferenceRequest) -> Result<(), PipelineError> {
        if request.context.trim().is_empty() {
            return Err(PipelineError::EmptyContext);
        }
        if request.mode == InferenceMode::ZeroShot && request.k != 0 {
            return Err(PipelineError::InvalidRequest("zero_shot requires k = 0".into()));
        }
        let tokens = count_tokens(&request.context, TokenizerProfile::WordPunct);
        if tokens > self.settings.token_limit {
            return Err(PipelineError::ContextTooLong {
                tokens,
                limit: self.settings.token_limit,
            });
        }
        Ok(())
    }

    pub fn infer(
        &self,
        request: &InferenceRequest,
        store: Option<&VectorStore>,
    ) -> Result<InferenceResult, PipelineError> {
        self.validate(request)?;
        let (hits, prompt, retrieval_ms) = match request.mode {
            InferenceMode::ZeroShot => {
                let template = self.templates.get(self.settings.zero_shot_template);
                (Vec::new(), build_zero_shot_prompt(&request.context, template)?, 0)
            }
            InferenceMode::RagFewshot | InferenceMode::DraftFewshot => {
                let store = store.filter(|s| !s.is_empty()).ok_or(PipelineError::StoreEmpty)?;
                let watch = self.clock.start();
                let hits = if request.k == 0 {
                    Vec::new()
                } else {
                    let query = self.embedder.embed_text(&request.context)?;
                    store.retrieve_top_k(&query, request.k, None)?
                };
                let retrieval_ms = watch.elapsed_ms();
                let template = self.templates.get(TemplateId::FewshotV1);
                let prompt = build_fewshot_prompt(&hits, &request.context, template, self.settings.prompt_budget)?;
                (hits, prompt, retrieval_ms)
            }
        };
        let generation = self.generator.generate(&prompt, &request.params)?;
        Ok(InferenceResult {
            decision: generation.text.clone(),
            hits,
            generation,
            prompt,
            retrieval_ms,
        })
    }
}
