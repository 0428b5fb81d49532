//! Run configuration: built-in defaults, then an optional TOML file, then flags.
//! API keys never appear here; backends read them from the environment variable
//! named by `api_key_env`.

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use contextqa::corpus::FormattingMode;
use contextqa::embedding::{EmbeddingBackendConfig, EmbeddingBackendKind};
use contextqa::generation::{CompletionBackendConfig, CompletionBackendKind};
use contextqa::prompt::{PromptStyle, QuestionLayout};
use contextqa::retrieval::SimilarityMetric;
use contextqa::tokenizer::TokenizerSpec;
use contextqa::FixtureMode;
use serde::Deserialize;

use crate::error::ConfigError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Backend {
    /// Remote embeddings and remote completions.
    Remote,
    /// Local-hash embeddings and remote completions.
    Local,
    /// Local-hash embeddings and scripted completions.
    Scripted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    Bullets,
    Comma,
}

impl From<Format> for FormattingMode {
    fn from(f: Format) -> Self {
        match f {
            Format::Bullets => FormattingMode::PreserveBullets,
            Format::Comma => FormattingMode::CommaJoined,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Layout {
    Multiline,
    Inline,
}

impl From<Layout> for QuestionLayout {
    fn from(l: Layout) -> Self {
        match l {
            Layout::Multiline => QuestionLayout::Multiline,
            Layout::Inline => QuestionLayout::Inline,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    Cosine,
    Dot,
}

impl From<Metric> for SimilarityMetric {
    fn from(m: Metric) -> Self {
        match m {
            Metric::Cosine => SimilarityMetric::Cosine,
            Metric::Dot => SimilarityMetric::Dot,
        }
    }
}

/// `[run]` table of the config file. Every field mirrors a command-line flag.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub corpus: Option<PathBuf>,
    pub store: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub budget: Option<usize>,
    pub budgets: Option<Vec<usize>>,
    pub metric: Option<Metric>,
    pub format: Option<Format>,
    pub layout: Option<Layout>,
    pub backend: Option<Backend>,
    pub fixtures: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub trace: Option<bool>,
    pub vocab: Option<PathBuf>,
    pub model_max_tokens: Option<usize>,
    pub reserved_completion_tokens: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub run: RunSection,
    pub tokenizer: Option<TokenizerSpec>,
    pub embedding: Option<EmbeddingBackendConfig>,
    pub completion: Option<CompletionBackendConfig>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| ConfigError(format!("invalid config {}: {e}", path.display())))
    }
}

/// Flags shared by every subcommand. `None` means "not given on the command line".
#[derive(Debug, Clone, Default, clap::Args)]
pub struct SharedArgs {
    /// TOML config file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Corpus CSV or JSONL.
    #[arg(long, global = true)]
    pub corpus: Option<PathBuf>,
    /// Vector store file.
    #[arg(long, global = true)]
    pub store: Option<PathBuf>,
    /// Test file (JSONL or plain text).
    #[arg(long, global = true)]
    pub test: Option<PathBuf>,
    /// BPE rank table; without one, tokens are whitespace-separated words.
    #[arg(long, global = true)]
    pub vocab: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub metric: Option<Metric>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    #[arg(long, global = true, value_enum)]
    pub layout: Option<Layout>,
    #[arg(long, global = true, value_enum)]
    pub backend: Option<Backend>,
    /// Fixture directory: `scripted.jsonl` for the scripted backend, `embeddings/`
    /// and `completions/` replay directories for remote backends.
    #[arg(long, global = true)]
    pub fixtures: Option<PathBuf>,
    /// Output directory for reports and traces.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Write assembled prompts alongside the reports.
    #[arg(long, global = true)]
    pub trace: bool,
}

/// Fully resolved settings for one invocation.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub corpus: Option<PathBuf>,
    pub store: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub budget: Option<usize>,
    pub budgets: Option<Vec<usize>>,
    pub metric: SimilarityMetric,
    pub style: PromptStyle,
    pub out: PathBuf,
    pub trace: bool,
    pub tokenizer: TokenizerSpec,
    pub embedding: EmbeddingBackendConfig,
    pub completion: CompletionBackendConfig,
    pub model_max_tokens: Option<usize>,
    pub reserved_completion_tokens: Option<usize>,
}

impl RunConfig {
    pub fn resolve(args: &SharedArgs) -> Result<Self, ConfigError> {
        let file = match &args.config {
            Some(path) => FileConfig::load(path)?,
            None => FileConfig::default(),
        };
        Self::layer(file, args)
    }

    pub fn layer(file: FileConfig, args: &SharedArgs) -> Result<Self, ConfigError> {
        let run = file.run;
        let backend = args.backend.or(run.backend).unwrap_or(Backend::Scripted);
        let fixtures = args.fixtures.clone().or(run.fixtures);

        let tokenizer = match args.vocab.clone().or(run.vocab) {
            Some(path) => TokenizerSpec::bpe(path, "bpe"),
            None => file.tokenizer.unwrap_or_default(),
        };

        let file_embedding = file.embedding.is_some();
        let mut embedding = file.embedding.unwrap_or_default();
        match backend {
            Backend::Remote => {
                if !file_embedding {
                    embedding = EmbeddingBackendConfig::remote(embedding.endpoint_url, embedding.api_key_env);
                }
                embedding.kind = EmbeddingBackendKind::Remote;
                if let Some(dir) = &fixtures {
                    embedding.fixture_dir = Some(dir.join("embeddings"));
                    if embedding.fixture_mode == FixtureMode::Off {
                        embedding.fixture_mode = FixtureMode::Replay;
                    }
                }
            }
            Backend::Local | Backend::Scripted => embedding.kind = EmbeddingBackendKind::LocalHash,
        }

        let mut completion = file.completion.unwrap_or_default();
        match backend {
            Backend::Remote | Backend::Local => {
                completion.kind = CompletionBackendKind::Remote;
                if let Some(dir) = &fixtures {
                    completion.fixture_dir = Some(dir.join("completions"));
                    if completion.fixture_mode == FixtureMode::Off {
                        completion.fixture_mode = FixtureMode::Replay;
                    }
                }
            }
            Backend::Scripted => {
                completion.kind = CompletionBackendKind::Scripted;
                if let Some(dir) = &fixtures {
                    completion.script_path = Some(dir.join("scripted.jsonl"));
                }
                if completion.script_path.is_none() {
                    return Err(ConfigError(
                        "the scripted backend needs --fixtures <dir> (or completion.script_path in the config)".into(),
                    ));
                }
            }
        }

        Ok(Self {
            corpus: args.corpus.clone().or(run.corpus),
            store: args.store.clone().or(run.store),
            test: args.test.clone().or(run.test),
            budget: run.budget,
            budgets: run.budgets,
            metric: args.metric.or(run.metric).unwrap_or(Metric::Cosine).into(),
            style: PromptStyle {
                mode: args.format.or(run.format).unwrap_or(Format::Bullets).into(),
                layout: args.layout.or(run.layout).unwrap_or(Layout::Multiline).into(),
            },
            out: args.out.clone().or(run.out).unwrap_or_else(|| PathBuf::from("results")),
            trace: args.trace || run.trace.unwrap_or(false),
            tokenizer,
            embedding,
            completion,
            model_max_tokens: run.model_max_tokens,
            reserved_completion_tokens: run.reserved_completion_tokens,
        })
    }

    pub fn require<'a>(value: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path, ConfigError> {
        value
            .as_deref()
            .ok_or_else(|| ConfigError(format!("missing {flag} (flag or [run] entry in --config)")))
    }
}
