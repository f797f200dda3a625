use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use draft_core::corpus::{split_corpus, Corpus, SplitSpec, TokenizerProfile, DEFAULT_TOKEN_LIMIT};
use draft_core::embed::{EmbedderProfile, DEFAULT_DIM};
use draft_core::genclient::{BackendProfile, Generator};
use draft_core::harness::{render_report, run_experiment, ExperimentConfig, ReportFormat};
use draft_core::pipeline::{
    export_training_dataset, write_training_jsonl, Drafter, ExportOptions, InferenceMode, InferenceRequest,
};
use draft_core::prompt::{TemplateId, TemplateSet, DEFAULT_BUDGET, DEFAULT_RAG_K};
use draft_core::util::RetryPolicy;
use draft_core::vstore::{index_corpus_with_profile, VectorStore};
use draft_service::ServiceConfig;
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(
    name = "draft",
    version,
    about = "Retrieval-augmented drafting of architectural decisions"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build or split a corpus.
    #[command(subcommand)]
    Corpus(CorpusCmd),
    /// Build a vector store.
    #[command(subcommand)]
    Vstore(VstoreCmd),
    /// Write a prompt/target training set for an external fine-tuner.
    ExportTrain(ExportArgs),
    /// Draft a decision for one context.
    Infer(InferArgs),
    /// Run an experiment config and print its tables.
    Bench(BenchArgs),
    /// Serve the HTTP API.
    Serve(ServeArgs),
}

#[derive(Subcommand)]
enum CorpusCmd {
    /// Parse a directory of markdown ADRs (or a .json/.jsonl dump) into canonical JSONL.
    Build {
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_TOKEN_LIMIT)]
        token_limit: usize,
        #[arg(long, value_enum, default_value_t = Tokenizer::WordPunct)]
        tokenizer: Tokenizer,
    },
    /// Seeded 60/20/20 split into train.jsonl, val.jsonl and test.jsonl.
    Split {
        corpus: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Prepended to each file name; a trailing `/` names a directory.
        #[arg(long, default_value = "")]
        out_prefix: String,
        #[arg(long, default_value_t = 0.6)]
        train_fraction: f64,
        #[arg(long, default_value_t = 0.2)]
        val_fraction: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum Tokenizer {
    WordPunct,
    Whitespace,
}

impl From<Tokenizer> for TokenizerProfile {
    fn from(t: Tokenizer) -> Self {
        match t {
            Tokenizer::WordPunct => TokenizerProfile::WordPunct,
            Tokenizer::Whitespace => TokenizerProfile::Whitespace,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum EmbedderArg {
    HashedLocal,
    Remote,
}

#[derive(Subcommand)]
enum VstoreCmd {
    Build {
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = EmbedderArg::HashedLocal)]
        embedder: EmbedderArg,
        #[arg(long, default_value_t = DEFAULT_DIM)]
        dim: usize,
        /// Remote embedding endpoint.
        #[arg(long)]
        endpoint: Option<String>,
        #[arg(long)]
        model: Option<String>,
    },
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    store: PathBuf,
    /// Records to export; defaults to every record in the store.
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_RAG_K)]
    k: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_BUDGET)]
    budget: usize,
    #[arg(long, default_value_t = 1.0)]
    sample_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    templates: Option<PathBuf>,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long, default_value = "draft_fewshot")]
    mode: InferenceMode,
    #[arg(long, default_value_t = DEFAULT_RAG_K)]
    k: usize,
    #[arg(long)]
    context_file: PathBuf,
    #[arg(long, default_value = "store")]
    store: PathBuf,
    /// `mock_echo`, `mock_constant:<text>`, `chat` (endpoint from the environment),
    /// inline JSON, or a path to a JSON backend profile.
    #[arg(long, default_value = "chat")]
    backend: String,
    #[arg(long)]
    templates: Option<PathBuf>,
    /// Print the full result as JSON instead of the decision text.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "table")]
    format: ReportFormat,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    config: PathBuf,
}

fn parse_backend(spec: &str) -> Result<BackendProfile> {
    Ok(match spec {
        "mock_echo" => BackendProfile::MockEcho,
        "chat" => BackendProfile::ChatCompletions {
            endpoint: None,
            model: None,
            retry: RetryPolicy::default(),
            max_in_flight: 4,
        },
        s if s.starts_with("mock_constant:") => BackendProfile::MockConstant {
            text: s["mock_constant:".len()..].to_string(),
        },
        s if s.trim_start().starts_with('{') => serde_json::from_str(s).context("backend JSON")?,
        path => {
            let text = fs::read_to_string(path).with_context(|| format!("reading backend profile {path}"))?;
            serde_json::from_str(&text).with_context(|| format!("parsing backend profile {path}"))?
        }
    })
}

fn load_templates(path: Option<&Path>) -> Result<TemplateSet> {
    Ok(match path {
        Some(p) => TemplateSet::load(p)?,
        None => TemplateSet::default(),
    })
}

fn corpus_cmd(cmd: CorpusCmd) -> Result<()> {
    match cmd {
        CorpusCmd::Build {
            input,
            out,
            token_limit,
            tokenizer,
        } => {
            let corpus = if input.is_dir() {
                Corpus::from_markdown_dir(&input, token_limit, tokenizer.into())?
            } else {
                Corpus::load_json(&input, token_limit, tokenizer.into())?
            };
            corpus.write_jsonl(&out)?;
            println!("{}", serde_json::to_string_pretty(corpus.stats())?);
        }
        CorpusCmd::Split {
            corpus,
            seed,
            out_prefix,
            train_fraction,
            val_fraction,
        } => {
            let corpus = Corpus::load_jsonl(&corpus)?;
            let spec = SplitSpec {
                train_fraction,
                val_fraction,
                seed,
            };
            let (train, val, test) = split_corpus(&corpus, &spec)?;
            for (name, part) in [("train", &train), ("val", &val), ("test", &test)] {
                let path = PathBuf::from(format!("{out_prefix}{name}.jsonl"));
                part.write_jsonl(&path)?;
                println!("{name}\t{}\t{}", part.len(), path.display());
            }
        }
    }
    Ok(())
}

fn vstore_cmd(cmd: VstoreCmd) -> Result<()> {
    let VstoreCmd::Build {
        corpus,
        out,
        embedder,
        dim,
        endpoint,
        model,
    } = cmd;
    let profile = match embedder {
        EmbedderArg::HashedLocal => EmbedderProfile::hashed_local(dim),
        EmbedderArg::Remote => {
            let Some(endpoint) = endpoint else {
                bail!("--embedder remote needs --endpoint");
            };
            EmbedderProfile::remote(endpoint, model.unwrap_or_default(), dim)
        }
    };
    let corpus = Corpus::load_jsonl(&corpus)?;
    let store = index_corpus_with_profile(&corpus, &profile)?;
    store.save(&out)?;
    println!("{}\t{}\t{}", store.len(), profile.identifier(), out.display());
    Ok(())
}

fn export_cmd(args: ExportArgs) -> Result<()> {
    let store = VectorStore::load(&args.store, None)?;
    let train = match &args.train {
        Some(p) => Corpus::load_jsonl(p)?,
        None => Corpus::from_records(store.records())?,
    };
    let embedder = store.profile().build()?;
    let templates = load_templates(args.templates.as_deref())?;
    let options = ExportOptions {
        budget: args.budget,
        sample_fraction: args.sample_fraction,
        seed: args.seed,
    };
    let examples = export_training_dataset(
        &train,
        &store,
        embedder.as_ref(),
        args.k,
        templates.get(TemplateId::FewshotV1),
        &options,
    )?;
    write_training_jsonl(&args.out, &examples)?;
    println!("{}\t{}", examples.len(), args.out.display());
    Ok(())
}

fn infer_cmd(args: InferArgs) -> Result<()> {
    let context =
        fs::read_to_string(&args.context_file).with_context(|| format!("reading {}", args.context_file.display()))?;
    let backend = parse_backend(&args.backend)?;
    let generator = Generator::from_profile(&backend)?;
    let templates = load_templates(args.templates.as_deref())?;
    let request = InferenceRequest::new(context.trim(), args.mode, args.k);
    let (drafter, store) = if args.mode == InferenceMode::ZeroShot {
        let embedder = EmbedderProfile::default().build()?;
        (Drafter::new(embedder, generator), None)
    } else {
        let store = VectorStore::load(&args.store, None)?;
        let embedder: Arc<_> = store.profile().build()?;
        (Drafter::new(embedder, generator), Some(store))
    };
    let result = drafter.with_templates(templates).infer(&request, store.as_ref())?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&result)?);
    } else {
        println!("{}", result.decision);
    }
    Ok(())
}

fn bench_cmd(args: BenchArgs) -> Result<()> {
    let mut config = ExperimentConfig::load(&args.config)?;
    if let Some(out) = args.out {
        config.output_dir = std::path::absolute(out)?;
    }
    let report = run_experiment(&config)?;
    print!("{}", render_report(&report, args.format)?);
    Ok(())
}

fn serve_cmd(args: ServeArgs) -> Result<()> {
    let config = ServiceConfig::load(&args.config)?;
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(draft_service::serve(config))?;
    Ok(())
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    match Cli::parse().command {
        Command::Corpus(c) => corpus_cmd(c),
        Command::Vstore(c) => vstore_cmd(c),
        Command::ExportTrain(a) => export_cmd(a),
        Command::Infer(a) => infer_cmd(a),
        Command::Bench(a) => bench_cmd(a),
        Command::Serve(a) => serve_cmd(a),
    }
}
