//! Runs configured candidates over a test split and reports metric and
//! efficiency tables.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{info, warn};

use crate::clock::Clock;
use crate::corpus::{Corpus, CorpusError, TokenizerProfile};
use crate::embed::{EmbedError, Embedder, EmbedderProfile};
use crate::genclient::{BackendProfile, GenError, GenerationParams, Generator};
use crate::metrics::{
    aggregate_samples, efficiency_table, metric_table, score_sample, EfficiencyReport, EfficiencySample, MetricError,
    MetricReport, SampleScores, Table, TableRow,
};
use crate::pipeline::{DraftSettings, Drafter, InferenceMode, InferenceRequest, InferenceResult, PipelineError};
use crate::prompt::{PromptError, TemplateSet, DEFAULT_RAG_K};
use crate::util::{seeded_subset, sha256_hex};
use crate::vstore::{StoreError, VectorStore};

pub const SAMPLE_LOG: &str = "samples.jsonl";
pub const REPORT_JSON: &str = "report.json";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid config: {0}")]
    ConfigInvalid(String),
    #[error("report has no candidates")]
    EmptyReport,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Generation(#[from] GenError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

fn default_k() -> usize {
    DEFAULT_RAG_K
}

fn default_failure_threshold() -> usize {
    10
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateConfig {
    pub name: String,
    pub mode: InferenceMode,
    pub backend: BackendProfile,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub params: GenerationParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Test split, JSONL.
    pub corpus_path: PathBuf,
    pub store_path: PathBuf,
    pub candidates: Vec<CandidateConfig>,
    #[serde(default)]
    pub sample_limit: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Embedder used for BERTScore; defaults to the store's profile.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric_embedder: Option<EmbedderProfile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub templates_path: Option<PathBuf>,
    #[serde(default)]
    pub draft: DraftSettings,
    /// A candidate stops after this many failures in a row.
    #[serde(default = "default_failure_threshold")]
    pub max_consecutive_failures: usize,
    /// Latencies are only measured when samples run one at a time.
    #[serde(default = "default_true")]
    pub record_latency: bool,
    #[serde(default)]
    pub parallel_samples: bool,
    /// Pins timestamps and zeroes latencies, for reproducible reports.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frozen_clock: Option<String>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl ExperimentConfig {
    /// Parses `path`; relative paths inside resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config: ExperimentConfig = serde_json::from_str(&text).map_err(|source| HarnessError::Json {
            path: path.to_path_buf(),
            source,
        })?;
        config.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        config.validate()?;
        Ok(config)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let invalid = |m: String| Err(HarnessError::ConfigInvalid(m));
        if self.candidates.is_empty() {
            return invalid("no candidates".into());
        }
        let mut seen = std::collections::HashSet::new();
        for c in &self.candidates {
            if c.name.trim().is_empty() {
                return invalid("candidate name is empty".into());
            }
            if !seen.insert(c.name.as_str()) {
                return invalid(format!("duplicate candidate name {:?}", c.name));
            }
            c.params
                .validate()
                .map_err(|e| HarnessError::ConfigInvalid(format!("candidate {:?}: {}", c.name, e.message)))?;
        }
        if self.sample_limit == Some(0) {
            return invalid("sample_limit must be positive".into());
        }
        if self.max_consecutive_failures == 0 {
            return invalid("max_consecutive_failures must be positive".into());
        }
        if self.parallel_samples && self.record_latency {
            return invalid("parallel_samples requires record_latency = false".into());
        }
        Ok(())
    }

    fn clock(&self) -> Clock {
        match &self.frozen_clock {
            Some(t) => Clock::Frozen(t.clone()),
            None => Clock::System,
        }
    }
}

/// One line of the per-sample log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub candidate: String,
    pub record_id: String,
    pub prompt_hash: Option<String>,
    pub shot_ids: Vec<String>,
    pub decision: Option<String>,
    pub scores: Option<SampleScores>,
    pub input_tokens: usize,
    pub output_tokens: usize,
    pub generation_ms: u64,
    pub retrieval_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl SampleRecord {
    fn efficiency(&self) -> EfficiencySample {
        EfficiencySample {
            input_tokens: self.input_tokens,
            output_tokens: self.output_tokens,
            generation_ms: self.generation_ms,
            retrieval_ms: self.retrieval_ms,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateReport {
    pub mode: InferenceMode,
    pub backend_id: String,
    pub k: usize,
    /// `None` when no sample succeeded.
    pub metrics: Option<MetricReport>,
    pub efficiency: Option<EfficiencyReport>,
    pub attempted: usize,
    pub failed: usize,
    pub aborted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportManifest {
    pub config: ExperimentConfig,
    pub started_at: String,
    pub finished_at: String,
    pub store_embedder: String,
    pub metric_embedder: String,
    pub tokenizer: TokenizerProfile,
    pub store_count: usize,
    pub test_count: usize,
    pub sample_ids: Vec<String>,
    pub failures: IndexMap<String, usize>,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub per_candidate: IndexMap<String, CandidateReport>,
    pub manifest: ReportManifest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Json,
    Table,
    Markdown,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "table" => Ok(ReportFormat::Table),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            other => Err(format!("unknown format {other:?}")),
        }
    }
}

fn sample_record(
    candidate: &str,
    record_id: &str,
    reference: &str,
    outcome: Result<InferenceResult, PipelineError>,
    metric_embedder: &dyn Embedder,
    record_latency: bool,
) -> Result<SampleRecord, HarnessError> {
    let mut rec = SampleRecord {
        candidate: candidate.to_string(),
        record_id: record_id.to_string(),
        prompt_hash: None,
        shot_ids: Vec::new(),
        decision: None,
        scores: None,
        input_tokens: 0,
        output_tokens: 0,
        generation_ms: 0,
        retrieval_ms: 0,
        error: None,
    };
    match outcome {
        Ok(out) => {
            rec.scores = Some(score_sample(&out.decision, reference, metric_embedder)?);
            rec.prompt_hash = Some(sha256_hex(&out.prompt.full_text()));
            rec.shot_ids = out.prompt.shot_ids;
            rec.input_tokens = out.generation.input_tokens;
            rec.output_tokens = out.generation.output_tokens;
            if record_latency {
                rec.generation_ms = out.generation.latency_ms;
                rec.retrieval_ms = out.retrieval_ms;
            }
            rec.decision = Some(out.decision);
        }
        Err(e) => {
            if let (PipelineError::Generation(g), true) = (&e, record_latency) {
                rec.generation_ms = g.latency_ms;
            }
            rec.error = Some(e.to_string());
        }
    }
    Ok(rec)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Runs every candidate, writes the per-sample log and `report.json` into
/// the output directory, and returns the report.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport, HarnessError> {
    config.validate()?;
    let clock = config.clock();
    let started_at = clock.timestamp();
    let test = Corpus::load_jsonl(&config.resolve(&config.corpus_path))?;
    if test.is_empty() {
        return Err(HarnessError::ConfigInvalid("test split is empty".into()));
    }
    if let Some(limit) = config.sample_limit {
        if limit > test.len() {
            return Err(HarnessError::ConfigInvalid(format!(
                "sample_limit {limit} exceeds test split size {}",
                test.len()
            )));
        }
    }
    let store = VectorStore::load(&config.resolve(&config.store_path), None)?;
    let store_embedder: Arc<dyn Embedder> = store.profile().build()?;
    let metric_embedder: Arc<dyn Embedder> = match &config.metric_embedder {
        Some(p) => p.build()?,
        None => store_embedder.clone(),
    };
    let templates = match &config.templates_path {
        Some(p) => TemplateSet::load(&config.resolve(p))?,
        None => TemplateSet::default(),
    };
    let picked = seeded_subset(test.len(), config.sample_limit.unwrap_or(test.len()), config.seed);
    let samples: Vec<_> = picked.iter().map(|&i| &test.records()[i]).collect();

    let out_dir = config.resolve(&config.output_dir);
    fs::create_dir_all(&out_dir).map_err(io_err(&out_dir))?;
    let log_path = out_dir.join(SAMPLE_LOG);
    let mut log = BufWriter::new(fs::File::create(&log_path).map_err(io_err(&log_path))?);

    let mut per_candidate = IndexMap::new();
    let mut failures = IndexMap::new();
    for cand in &config.candidates {
        let generator = Generator::from_profile(&cand.backend)?;
        let backend_id = generator.backend_id();
        let drafter = Drafter::new(store_embedder.clone(), generator)
            .with_templates(templates.clone())
            .with_settings(config.draft.clone())
            .with_clock(clock.clone());
        let k = if cand.mode == InferenceMode::ZeroShot {
            0
        } else {
            cand.k
        };
        let request = |context: &str| InferenceRequest {
            context: context.to_string(),
            k,
            mode: cand.mode,
            params: cand.params.clone(),
        };
        let run_one = |r: &&crate::corpus::AdrRecord| {
            let outcome = drafter.infer(&request(&r.context), Some(&store));
            sample_record(
                &cand.name,
                &r.id,
                &r.decision,
                outcome,
                metric_embedder.as_ref(),
                config.record_latency,
            )
        };
        info!(candidate = %cand.name, samples = samples.len(), "running candidate");

        let mut records = Vec::with_capacity(samples.len());
        let mut streak = 0;
        let mut aborted = false;
        let mut consume = |rec: SampleRecord, records: &mut Vec<SampleRecord>| {
            streak = if rec.error.is_some() { streak + 1 } else { 0 };
            records.push(rec);
            streak >= config.max_consecutive_failures
        };
        if config.parallel_samples {
            let all: Vec<SampleRecord> = samples.par_iter().map(run_one).collect::<Result<_, _>>()?;
            for rec in all {
                if consume(rec, &mut records) {
                    aborted = true;
                    break;
                }
            }
        } else {
            for r in &samples {
                if consume(run_one(r)?, &mut records) {
                    aborted = true;
                    break;
                }
            }
        }
        if aborted {
            warn!(candidate = %cand.name, "aborted after {} consecutive failures", config.max_consecutive_failures);
        }

        for rec in &records {
            serde_json::to_writer(&mut log, rec).map_err(|source| HarnessError::Json {
                path: log_path.clone(),
                source,
            })?;
            log.write_all(b"\n").map_err(io_err(&log_path))?;
        }
        let ok: Vec<&SampleRecord> = records.iter().filter(|r| r.error.is_none()).collect();
        let scores: Vec<SampleScores> = ok.iter().filter_map(|r| r.scores).collect();
        let effs: Vec<EfficiencySample> = ok.iter().map(|r| r.efficiency()).collect();
        let failed = records.len() - ok.len();
        failures.insert(cand.name.clone(), failed);
        per_candidate.insert(
            cand.name.clone(),
            CandidateReport {
                mode: cand.mode,
                backend_id,
                k,
                metrics: MetricReport::from_samples(&scores).ok(),
                efficiency: aggregate_samples(&effs).ok(),
                attempted: records.len(),
                failed,
                aborted,
            },
        );
    }
    log.flush().map_err(io_err(&log_path))?;

    let report = ExperimentReport {
        per_candidate,
        manifest: ReportManifest {
            config: config.clone(),
            started_at,
            finished_at: clock.timestamp(),
            store_embedder: store.profile().identifier(),
            metric_embedder: metric_embedder.profile().identifier(),
            tokenizer: TokenizerProfile::WordPunct,
            store_count: store.len(),
            test_count: test.len(),
            sample_ids: samples.iter().map(|r| r.id.clone()).collect(),
            failures,
            version: env!("CARGO_PKG_VERSION").to_string(),
        },
    };
    let report_path = out_dir.join(REPORT_JSON);
    fs::write(&report_path, render_report(&report, ReportFormat::Json)?).map_err(io_err(&report_path))?;
    Ok(report)
}

fn tables(report: &ExperimentReport) -> (Table, Table) {
    let label = |name: &String, c: &CandidateReport| TableRow {
        approach: name.clone(),
        model: c.backend_id.clone(),
    };
    let metrics: Vec<_> = report
        .per_candidate
        .iter()
        .map(|(n, c)| (label(n, c), c.metrics.as_ref()))
        .collect();
    let effs: Vec<_> = report
        .per_candidate
        .iter()
        .map(|(n, c)| (label(n, c), c.efficiency.as_ref()))
        .collect();
    (metric_table(&metrics), efficiency_table(&effs))
}

pub fn render_report(report: &ExperimentReport, format: ReportFormat) -> Result<String, HarnessError> {
    if report.per_candidate.is_empty() {
        return Err(HarnessError::EmptyReport);
    }
    Ok(match format {
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(report).expect("report serializes");
            s.push('\n');
            s
        }
        ReportFormat::Table => {
            let (m, e) = tables(report);
            format!("Automated metrics\n{}\nEfficiency\n{}", m.to_aligned(), e.to_aligned())
        }
        ReportFormat::Markdown => {
            let (m, e) = tables(report);
            format!(
                "## Automated metrics\n\n{}\n## Efficiency\n\n{}",
                m.to_markdown(),
                e.to_markdown()
            )
        }
    })
}

pub fn read_sample_log(path: &Path) -> Result<Vec<SampleRecord>, HarnessError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| HarnessError::Json {
            path: path.to_path_buf(),
            source,
        })?);
    }
    Ok(out)
}

/// Recomputes per-candidate metric means from logged decisions against the
/// reference decisions in `corpus`.
pub fn rescore(
    log: &[SampleRecord],
    corpus: &Corpus,
    embedder: &dyn Embedder,
) -> Result<IndexMap<String, MetricReport>, HarnessError> {
    let mut grouped: IndexMap<String, Vec<SampleScores>> = IndexMap::new();
    for rec in log {
        let Some(decision) = &rec.decision else { continue };
        let reference = corpus
            .get(&rec.record_id)
            .ok_or_else(|| HarnessError::ConfigInvalid(format!("record {:?} not in corpus", rec.record_id)))?;
        grouped
            .entry(rec.candidate.clone())
            .or_default()
            .push(score_sample(decision, &reference.decision, embedder)?);
    }
    grouped
        .into_iter()
        .map(|(name, scores)| Ok((name, MetricReport::from_samples(&scores)?)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::AdrRecord;
    use crate::embed::HashedEmbedder;
    use crate::vstore::index_corpus;

    fn records(n: usize) -> Vec<AdrRecord> {
        (0..n)
            .map(|i| AdrRecord {
                id: format!("t{i}"),
                context: format!("Service {i} needs a choice about storage layer {}", i * 7 % 5),
                decision: format!("We will use engine {i}."),
                source_uri: "mem".into(),
                template: Default::default(),
            })
            .collect()
    }

    fn setup(dir: &Path, n: usize, candidates: &str, extra: &str) -> PathBuf {
        let corpus = Corpus::from_records(records(n)).unwrap();
        corpus.write_jsonl(&dir.join("test.jsonl")).unwrap();
        let e = HashedEmbedder::new(64).unwrap();
        index_corpus(&corpus, &e).unwrap().save(&dir.join("store")).unwrap();
        let cfg = format!(
            r#"{{"corpus_path":"test.jsonl","store_path":"store","output_dir":"out",
                "frozen_clock":"2024-01-01T00:00:00Z","candidates":{candidates}{extra}}}"#
        );
        let path = dir.join("bench.json");
        fs::write(&path, cfg).unwrap();
        path
    }

    const ECHO: &str = r#"[{"name":"echo","mode":"draft_fewshot","backend":{"kind":"mock_echo"},"k":3}]"#;

    #[test]
    fn echo_run_scores_perfectly() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig::load(&setup(dir.path(), 10, ECHO, "")).unwrap();
        let report = run_experiment(&cfg).unwrap();
        let c = &report.per_candidate["echo"];
        let m = c.metrics.as_ref().unwrap();
        assert_eq!(m.n_samples, 10);
        assert!((m.rouge1.f1 - 1.0).abs() < 1e-12);
        assert!((m.bertscore.f1 - 1.0).abs() < 1e-6);
        assert_eq!(c.failed, 0);
        let log = read_sample_log(&dir.path().join("out").join(SAMPLE_LOG)).unwrap();
        assert_eq!(log.len(), 10);
        assert!(log
            .iter()
            .all(|r| r.prompt_hash.as_ref().is_some_and(|h| h.len() == 64)));
    }

    #[test]
    fn two_candidates_two_rows_and_rescore() {
        let dir = tempfile::tempdir().unwrap();
        let cands = r#"[{"name":"echo","mode":"rag_fewshot","backend":{"kind":"mock_echo"}},
            {"name":"const","mode":"zero_shot","backend":{"kind":"mock_constant","text":"We will use engine 1."}}]"#;
        let path = setup(dir.path(), 6, cands, r#","sample_limit":4,"seed":3"#);
        let cfg = ExperimentConfig::load(&path).unwrap();
        let report = run_experiment(&cfg).unwrap();
        assert_eq!(report.per_candidate.len(), 2);
        assert_eq!(report.manifest.sample_ids.len(), 4);
        let md = render_report(&report, ReportFormat::Markdown).unwrap();
        assert!(md.contains("rouge-1 | bleu | Meteor | BERTScore p/r/f1"));
        assert_eq!(md.lines().filter(|l| l.starts_with("| echo |")).count(), 2);

        let log = read_sample_log(&dir.path().join("out").join(SAMPLE_LOG)).unwrap();
        let corpus = Corpus::load_jsonl(&dir.path().join("test.jsonl")).unwrap();
        let e = HashedEmbedder::new(64).unwrap();
        let again = rescore(&log, &corpus, &e).unwrap();
        for (name, c) in &report.per_candidate {
            assert_eq!(c.metrics.as_ref(), Some(&again[name]));
        }
    }

    #[test]
    fn json_round_trips_and_runs_are_identical() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig::load(&setup(dir.path(), 5, ECHO, "")).unwrap();
        let a = render_report(&run_experiment(&cfg).unwrap(), ReportFormat::Json).unwrap();
        let b = render_report(&run_experiment(&cfg).unwrap(), ReportFormat::Json).unwrap();
        assert_eq!(a, b);
        let parsed: ExperimentReport = serde_json::from_str(&a).unwrap();
        assert_eq!(render_report(&parsed, ReportFormat::Json).unwrap(), a);
    }

    #[test]
    fn failing_candidate_is_aborted_not_the_run() {
        let dir = tempfile::tempdir().unwrap();
        let cands = r#"[{"name":"down","mode":"rag_fewshot",
              "backend":{"kind":"chat_completions","endpoint":"http://127.0.0.1:9","retry":{"max_attempts":1,"initial_backoff_ms":0}},
              "params":{"model_name":"m","timeout_ms":200}},
            {"name":"echo","mode":"rag_fewshot","backend":{"kind":"mock_echo"}}]"#;
        let path = setup(dir.path(), 6, cands, r#","max_consecutive_failures":2"#);
        let report = run_experiment(&ExperimentConfig::load(&path).unwrap()).unwrap();
        let down = &report.per_candidate["down"];
        assert!(down.aborted);
        assert_eq!((down.attempted, down.failed), (2, 2));
        assert!(down.metrics.is_none());
        assert_eq!(report.manifest.failures["down"], 2);
        assert!(report.per_candidate["echo"].metrics.is_some());
        let table = render_report(&report, ReportFormat::Table).unwrap();
        assert!(table.contains("n/a"));
    }

    #[test]
    fn config_validation() {
        let dir = tempfile::tempdir().unwrap();
        let dup = r#"[{"name":"a","mode":"zero_shot","backend":{"kind":"mock_echo"}},
                     {"name":"a","mode":"zero_shot","backend":{"kind":"mock_echo"}}]"#;
        assert!(matches!(
            ExperimentConfig::load(&setup(dir.path(), 3, dup, "")),
            Err(HarnessError::ConfigInvalid(_))
        ));
        let cfg = ExperimentConfig::load(&setup(dir.path(), 3, ECHO, r#","sample_limit":4"#)).unwrap();
        assert!(matches!(run_experiment(&cfg), Err(HarnessError::ConfigInvalid(_))));
        let mut empty = cfg.clone();
        empty.candidates.clear();
        let report = ExperimentReport {
            per_candidate: IndexMap::new(),
            manifest: ReportManifest {
                config: empty,
                started_at: String::new(),
                finished_at: String::new(),
                store_embedder: String::new(),
                metric_embedder: String::new(),
                tokenizer: TokenizerProfile::WordPunct,
                store_count: 0,
                test_count: 0,
                sample_ids: vec![],
                failures: IndexMap::new(),
                version: String::new(),
            },
        };
        assert!(matches!(
            render_report(&report, ReportFormat::Json),
            Err(HarnessError::EmptyReport)
        ));
    }
}
