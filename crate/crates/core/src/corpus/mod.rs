//! ADR corpus: parsing, filtering, deduplication, persistence and splitting.

mod parse;
mod split;
mod tokens;

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use walkdir::WalkDir;

pub use parse::{parse_adr, parse_adr_bytes, parse_adr_with_ordinal, render_markdown, AdrTemplate, ParseError};
pub use split::{split_corpus, SplitSpec};
pub use tokens::{count_tokens, lowercase_tokens, segment, TokenizerProfile};

/// Context token limit applied when building a corpus.
pub const DEFAULT_TOKEN_LIMIT: usize = 500;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{source_uri}: unparseable ADR: {reason}")]
    Unparseable { source_uri: String, reason: ParseError },
    #[error("corpus has {count} records; every split must be non-empty")]
    CorpusTooSmall { count: usize },
    #[error("invalid split fractions: train {train}, val {val}")]
    InvalidSplit { train: f64, val: f64 },
    #[error("duplicate record id {0:?}")]
    DuplicateId(String),
    #[error("{path}:{line}: {source}")]
    Json {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CorpusError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        CorpusError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// One Context–Decision pair with provenance. Serializes to exactly the
/// canonical JSONL fields `id`, `context`, `decision`, `source_uri`, `template`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AdrRecord {
    pub id: String,
    pub context: String,
    pub decision: String,
    pub source_uri: String,
    #[serde(default)]
    pub template: AdrTemplate,
}

impl AdrRecord {
    pub fn pair(&self) -> ContextDecisionPair {
        ContextDecisionPair {
            context: self.context.clone(),
            decision: self.decision.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ContextDecisionPair {
    pub context: String,
    pub decision: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub count: usize,
    pub context_token_median: usize,
    pub decision_token_median: usize,
    pub rejected_overlong: usize,
    pub rejected_unparseable: usize,
    pub rejected_duplicate: usize,
    pub tokenizer: TokenizerProfile,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    records: Vec<AdrRecord>,
    stats: CorpusStats,
}

/// True iff both fields are non-empty and the context fits in `limit` tokens.
pub fn filter_record(record: &AdrRecord, limit: usize, tokenizer: TokenizerProfile) -> bool {
    if record.context.trim().is_empty() || record.decision.trim().is_empty() {
        return false;
    }
    count_tokens(&record.context, tokenizer) <= limit
}

/// Lower median (mean of the two middle values, rounded down, for even counts).
fn median(mut values: Vec<usize>) -> usize {
    if values.is_empty() {
        return 0;
    }
    values.sort_unstable();
    let mid = values.len() / 2;
    if values.len() % 2 == 1 {
        values[mid]
    } else {
        (values[mid - 1] + values[mid]) / 2
    }
}

/// Accumulates parsed records, applying the token filter and deduplication.
#[derive(Debug)]
pub struct CorpusBuilder {
    limit: usize,
    tokenizer: TokenizerProfile,
    records: Vec<AdrRecord>,
    ids: HashSet<String>,
    contents: HashSet<(String, String)>,
    rejected_overlong: usize,
    rejected_unparseable: usize,
    rejected_duplicate: usize,
}

impl CorpusBuilder {
    pub fn new(limit: usize, tokenizer: TokenizerProfile) -> Self {
        CorpusBuilder {
            limit,
            tokenizer,
            records: Vec::new(),
            ids: HashSet::new(),
            contents: HashSet::new(),
            rejected_overlong: 0,
            rejected_unparseable: 0,
            rejected_duplicate: 0,
        }
    }

    /// Adds a record. Returns whether it was retained.
    pub fn push(&mut self, record: AdrRecord) -> Result<bool, CorpusError> {
        if record.context.trim().is_empty() || record.decision.trim().is_empty() {
            self.rejected_unparseable += 1;
            return Ok(false);
        }
        if !filter_record(&record, self.limit, self.tokenizer) {
            self.rejected_overlong += 1;
            return Ok(false);
        }
        let key = (record.context.clone(), record.decision.clone());
        if self.contents.contains(&key) {
            self.rejected_duplicate += 1;
            return Ok(false);
        }
        if !self.ids.insert(record.id.clone()) {
            return Err(CorpusError::DuplicateId(record.id));
        }
        self.contents.insert(key);
        self.records.push(record);
        Ok(true)
    }

    /// Parses and adds a markdown document; parse failures are counted, not raised.
    pub fn push_markdown(&mut self, raw: &str, source_uri: &str) -> Result<bool, CorpusError> {
        match parse_adr(raw, source_uri) {
            Ok(record) => self.push(record),
            Err(_) => {
                self.rejected_unparseable += 1;
                Ok(false)
            }
        }
    }

    pub fn finish(self) -> Corpus {
        let tokenizer = self.tokenizer;
        let ctx = self
            .records
            .iter()
            .map(|r| count_tokens(&r.context, tokenizer))
            .collect();
        let dec = self
            .records
            .iter()
            .map(|r| count_tokens(&r.decision, tokenizer))
            .collect();
        let stats = CorpusStats {
            count: self.records.len(),
            context_token_median: median(ctx),
            decision_token_median: median(dec),
            rejected_overlong: self.rejected_overlong,
            rejected_unparseable: self.rejected_unparseable,
            rejected_duplicate: self.rejected_duplicate,
            tokenizer,
        };
        Corpus {
            records: self.records,
            stats,
        }
    }
}

impl Corpus {
    /// Builds a corpus from already-validated records without filtering.
    /// Fails on duplicate ids.
    pub fn from_records(records: Vec<AdrRecord>) -> Result<Self, CorpusError> {
        let mut b = CorpusBuilder::new(usize::MAX, TokenizerProfile::default());
        let mut ids = HashSet::new();
        for r in &records {
            if !ids.insert(r.id.as_str()) {
                return Err(CorpusError::DuplicateId(r.id.clone()));
            }
        }
        b.records = records;
        Ok(b.finish())
    }

    pub fn records(&self) -> &[AdrRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<AdrRecord> {
        self.records
    }

    pub fn stats(&self) -> &CorpusStats {
        &self.stats
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&AdrRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    /// Walks `root` for `.md` files in sorted path order. Source URIs are
    /// paths relative to `root` with `/` separators.
    pub fn from_markdown_dir(root: &Path, limit: usize, tokenizer: TokenizerProfile) -> Result<Self, CorpusError> {
        let mut builder = CorpusBuilder::new(limit, tokenizer);
        let walker = WalkDir::new(root).sort_by_file_name().follow_links(true);
        for entry in walker {
            let entry = entry.map_err(|e| {
                let path = e.path().unwrap_or(root).to_path_buf();
                CorpusError::Io { path, source: e.into() }
            })?;
            let path = entry.path();
            let is_md = path
                .extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| e.eq_ignore_ascii_case("md"));
            if !entry.file_type().is_file() || !is_md {
                continue;
            }
            let bytes = fs::read(path).map_err(|e| CorpusError::io(path, e))?;
            let rel = path.strip_prefix(root).unwrap_or(path);
            let uri = rel
                .components()
                .map(|c| c.as_os_str().to_string_lossy())
                .collect::<Vec<_>>()
                .join("/");
            builder.push_markdown(&String::from_utf8_lossy(&bytes), &uri)?;
        }
        Ok(builder.finish())
    }

    /// Loads canonical JSONL, or a JSON array when the extension is `.json`.
    /// Records are filtered and deduplicated like markdown input.
    pub fn load_json(path: &Path, limit: usize, tokenizer: TokenizerProfile) -> Result<Self, CorpusError> {
        let records = read_records(path)?;
        let mut builder = CorpusBuilder::new(limit, tokenizer);
        for r in records {
            builder.push(r)?;
        }
        Ok(builder.finish())
    }

    /// Loads canonical JSONL verbatim (no filtering), preserving order.
    pub fn load_jsonl(path: &Path) -> Result<Self, CorpusError> {
        Corpus::from_records(read_records(path)?)
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<(), CorpusError> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| CorpusError::io(parent, e))?;
        }
        let file = fs::File::create(path).map_err(|e| CorpusError::io(path, e))?;
        let mut w = BufWriter::new(file);
        for r in &self.records {
            write_record_line(&mut w, r).map_err(|e| CorpusError::io(path, e))?;
        }
        w.flush().map_err(|e| CorpusError::io(path, e))
    }
}

pub fn write_record_line<W: Write>(w: &mut W, record: &AdrRecord) -> std::io::Result<()> {
    serde_json::to_writer(&mut *w, record)?;
    w.write_all(b"\n")
}

/// Reads records from JSONL (`.jsonl` or anything else) or a JSON array (`.json`).
pub fn read_records(path: &Path) -> Result<Vec<AdrRecord>, CorpusError> {
    let is_array = path.extension().and_then(|e| e.to_str()) == Some("json");
    if is_array {
        let text = fs::read_to_string(path).map_err(|e| CorpusError::io(path, e))?;
        return serde_json::from_str(&text).map_err(|source| CorpusError::Json {
            path: path.to_path_buf(),
            line: source.line(),
            source,
        });
    }
    let file = fs::File::open(path).map_err(|e| CorpusError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CorpusError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|source| CorpusError::Json {
            path: path.to_path_buf(),
            line: i + 1,
            source,
        })?;
        out.push(record);
    }
    Ok(out)
}
