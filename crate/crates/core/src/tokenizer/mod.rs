//! Token counting and token-boundary truncation.
//!
//! Budget arithmetic throughout the crate goes through [`Tokenizer`], so the rest of
//! the pipeline does not care whether tokens are whitespace-delimited words or
//! byte-pair-encoded pieces from a rank table.

mod bpe;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bpe::BpeVocab;

#[derive(Debug, Error)]
pub enum TokenizerError {
    #[error("tokenizer `{name}` is bpe-vocab but no vocabulary file was configured")]
    MissingVocab { name: String },
    #[error("cannot read vocabulary file {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("vocabulary {origin}, line {line}: {reason}")]
    Parse {
        origin: String,
        line: usize,
        reason: String,
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TokenizerKind {
    /// Maximal runs of non-whitespace characters.
    #[default]
    ApproximateWords,
    /// Byte-level BPE driven by a rank table file.
    BpeVocab,
}

/// Declarative description of a tokenizer, as stored in configs and corpus tables.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizerSpec {
    #[serde(default)]
    pub kind: TokenizerKind,
    #[serde(default)]
    pub vocab_path: Option<PathBuf>,
    #[serde(default = "default_name")]
    pub name: String,
}

fn default_name() -> String {
    "approximate-words".to_string()
}

impl Default for TokenizerSpec {
    fn default() -> Self {
        Self::approximate_words()
    }
}

impl TokenizerSpec {
    pub fn approximate_words() -> Self {
        Self {
            kind: TokenizerKind::ApproximateWords,
            vocab_path: None,
            name: default_name(),
        }
    }

    pub fn bpe(vocab_path: impl Into<PathBuf>, name: impl Into<String>) -> Self {
        Self {
            kind: TokenizerKind::BpeVocab,
            vocab_path: Some(vocab_path.into()),
            name: name.into(),
        }
    }
}

#[derive(Debug, Clone)]
enum Engine {
    Words,
    Bpe(Arc<BpeVocab>),
}

/// A constructed tokenizer. Cheap to clone; immutable after construction.
#[derive(Debug, Clone)]
pub struct Tokenizer {
    spec: TokenizerSpec,
    engine: Engine,
}

impl Default for Tokenizer {
    fn default() -> Self {
        Self::approximate_words()
    }
}

impl Tokenizer {
    pub fn approximate_words() -> Self {
        Self {
            spec: TokenizerSpec::approximate_words(),
            engine: Engine::Words,
        }
    }

    pub fn from_spec(spec: &TokenizerSpec) -> Result<Self, TokenizerError> {
        let engine = match spec.kind {
            TokenizerKind::ApproximateWords => Engine::Words,
            TokenizerKind::BpeVocab => {
                let path = spec.vocab_path.as_deref().ok_or_else(|| TokenizerError::MissingVocab {
                    name: spec.name.clone(),
                })?;
                Engine::Bpe(Arc::new(BpeVocab::from_file(path)?))
            }
        };
        Ok(Self {
            spec: spec.clone(),
            engine,
        })
    }

    /// Builds a BPE tokenizer around an already-parsed vocabulary.
    pub fn with_vocab(vocab: BpeVocab, name: impl Into<String>, vocab_path: Option<&Path>) -> Self {
        Self {
            spec: TokenizerSpec {
                kind: TokenizerKind::BpeVocab,
                vocab_path: vocab_path.map(Path::to_path_buf),
                name: name.into(),
            },
            engine: Engine::Bpe(Arc::new(vocab)),
        }
    }

    pub fn spec(&self) -> &TokenizerSpec {
        &self.spec
    }

    pub fn count_tokens(&self, text: &str) -> usize {
        match &self.engine {
            Engine::Words => text.split_whitespace().count(),
            Engine::Bpe(vocab) => vocab.count(text),
        }
    }

    /// Longest prefix of `text`, cut at a token boundary, holding at most `limit` tokens.
    pub fn truncate_to_tokens<'a>(&self, text: &'a str, limit: usize) -> &'a str {
        if limit == 0 {
            return "";
        }
        match &self.engine {
            Engine::Words => match word_spans(text).nth(limit - 1) {
                // A following word exists only if there is non-whitespace after `end`.
                Some((_, end)) if text[end..].trim_start().is_empty() => text,
                Some((_, end)) => &text[..end],
                None => text,
            },
            Engine::Bpe(vocab) => vocab.truncate(text, limit),
        }
    }

    /// Surface strings of the tokens in `text`, in order.
    pub fn token_strings(&self, text: &str) -> Vec<String> {
        match &self.engine {
            Engine::Words => text.split_whitespace().map(str::to_owned).collect(),
            Engine::Bpe(vocab) => vocab.token_strings(text),
        }
    }
}

/// Byte spans of maximal non-whitespace runs.
fn word_spans(text: &str) -> impl Iterator<Item = (usize, usize)> + '_ {
    let mut chars = text.char_indices().peekable();
    std::iter::from_fn(move || {
        while let Some(&(_, c)) = chars.peek() {
            if !c.is_whitespace() {
                break;
            }
            chars.next();
        }
        let (start, _) = *chars.peek()?;
        let mut end = start;
        while let Some(&(i, c)) = chars.peek() {
            if c.is_whitespace() {
                break;
            }
            end = i + c.len_utf8();
            chars.next();
        }
        Some((start, end))
    })
}
