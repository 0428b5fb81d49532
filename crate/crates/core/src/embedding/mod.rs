//! Text embeddings from a remote service or a deterministic local hashing backend.

mod local;
mod remote;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::http::{FixtureMode, RetryPolicy};
use crate::parallel::ordered_map;
use crate::tokenizer::Tokenizer;

pub use local::{fnv1a64, local_hash_embed};
use remote::RemoteEmbeddingClient;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("cannot embed empty text")]
    EmptyInput,
    #[error("invalid embedding configuration: {0}")]
    Config(String),
    #[error("invalid vector: {0}")]
    InvalidVector(String),
    #[error("embedding backend failed after {attempts} attempt(s): {message}")]
    Backend { attempts: u32, message: String },
    #[error("embedding backend rejected the request (HTTP {status}): {message}")]
    Rejected { status: u16, message: String },
    #[error("malformed embedding response: {0}")]
    Protocol(String),
    #[error("embedding fixture: {0}")]
    Fixture(String),
    #[error("text {index}: {source}")]
    AtIndex {
        index: usize,
        #[source]
        source: Box<EmbeddingError>,
    },
}

/// A fixed-length vector of finite values.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    values: Vec<f32>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f32>) -> Result<Self, EmbeddingError> {
        if values.is_empty() {
            return Err(EmbeddingError::InvalidVector("zero dimensions".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(EmbeddingError::InvalidVector(format!("non-finite value at index {i}")));
        }
        Ok(Self { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn norm(&self) -> f64 {
        self.values
            .iter()
            .map(|&v| f64::from(v) * f64::from(v))
            .sum::<f64>()
            .sqrt()
    }

    /// Unit-length copy, or `None` for the zero vector.
    pub fn normalized(&self) -> Option<Self> {
        let norm = self.norm();
        if norm == 0.0 {
            return None;
        }
        let values = self.values.iter().map(|&v| (f64::from(v) / norm) as f32).collect();
        Some(Self { values })
    }

    /// Multiplies every component by `factor`.
    pub fn scaled(&self, factor: f32) -> Result<Self, EmbeddingError> {
        Self::new(self.values.iter().map(|v| v * factor).collect())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmbeddingBackendKind {
    Remote,
    #[default]
    LocalHash,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingBackendConfig {
    pub kind: EmbeddingBackendKind,
    pub model_name: String,
    pub endpoint_url: String,
    pub api_key_env: String,
    pub dim: usize,
    pub max_input_tokens: usize,
    pub normalize: bool,
    pub retry: RetryPolicy,
    /// Texts per remote request.
    pub batch_size: usize,
    pub max_in_flight: usize,
    pub timeout_secs: u64,
    pub fixture_dir: Option<PathBuf>,
    pub fixture_mode: FixtureMode,
}

pub const REMOTE_EMBEDDING_DIM: usize = 1536;
pub const DEFAULT_LOCAL_DIM: usize = 256;

impl Default for EmbeddingBackendConfig {
    fn default() -> Self {
        Self::local(DEFAULT_LOCAL_DIM)
    }
}

impl EmbeddingBackendConfig {
    pub fn local(dim: usize) -> Self {
        Self {
            kind: EmbeddingBackendKind::LocalHash,
            model_name: "text-embedding-ada-002".into(),
            endpoint_url: "https://api.openai.com/v1/embeddings".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            dim,
            max_input_tokens: 8191,
            normalize: true,
            retry: RetryPolicy::default(),
            batch_size: 16,
            max_in_flight: 4,
            timeout_secs: 60,
            fixture_dir: None,
            fixture_mode: FixtureMode::Off,
        }
    }

    pub fn remote(endpoint_url: impl Into<String>, api_key_env: impl Into<String>) -> Self {
        Self {
            kind: EmbeddingBackendKind::Remote,
            endpoint_url: endpoint_url.into(),
            api_key_env: api_key_env.into(),
            dim: REMOTE_EMBEDDING_DIM,
            ..Self::local(REMOTE_EMBEDDING_DIM)
        }
    }

    fn validate(&self) -> Result<(), EmbeddingError> {
        if self.dim == 0 {
            return Err(EmbeddingError::Config("dim must be positive".into()));
        }
        if self.max_input_tokens == 0 {
            return Err(EmbeddingError::Config("max_input_tokens must be positive".into()));
        }
        if self.kind == EmbeddingBackendKind::Remote {
            if self.endpoint_url.trim().is_empty() {
                return Err(EmbeddingError::Config("remote backend requires endpoint_url".into()));
            }
            if self.api_key_env.trim().is_empty() {
                return Err(EmbeddingError::Config("remote backend requires api_key_env".into()));
            }
        }
        Ok(())
    }
}

/// Embeds texts with one configured backend.
#[derive(Debug)]
pub struct Embedder {
    cfg: EmbeddingBackendConfig,
    tokenizer: Tokenizer,
    remote: Option<RemoteEmbeddingClient>,
}

impl Embedder {
    pub fn new(cfg: EmbeddingBackendConfig, tokenizer: Tokenizer) -> Result<Self, EmbeddingError> {
        cfg.validate()?;
        let remote = match cfg.kind {
            EmbeddingBackendKind::Remote => Some(RemoteEmbeddingClient::new(&cfg)?),
            EmbeddingBackendKind::LocalHash => None,
        };
        Ok(Self { cfg, tokenizer, remote })
    }

    pub fn config(&self) -> &EmbeddingBackendConfig {
        &self.cfg
    }

    pub fn dim(&self) -> usize {
        self.cfg.dim
    }

    fn prepare<'a>(&self, text: &'a str) -> Result<&'a str, EmbeddingError> {
        if text.trim().is_empty() {
            return Err(EmbeddingError::EmptyInput);
        }
        let cut = self.tokenizer.truncate_to_tokens(text, self.cfg.max_input_tokens);
        if cut.len() < text.len() {
            log::warn!(
                "embedding input truncated to {} tokens ({} of {} bytes kept)",
                self.cfg.max_input_tokens,
                cut.len(),
                text.len()
            );
        }
        Ok(cut)
    }

    fn finish(&self, vector: EmbeddingVector) -> Result<EmbeddingVector, EmbeddingError> {
        if vector.dim() != self.cfg.dim {
            return Err(EmbeddingError::Protocol(format!(
                "expected {} dimensions, got {}",
                self.cfg.dim,
                vector.dim()
            )));
        }
        if self.cfg.normalize {
            vector
                .normalized()
                .ok_or_else(|| EmbeddingError::Protocol("backend returned the zero vector".into()))
        } else {
            Ok(vector)
        }
    }

    pub fn embed_text(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError> {
        let text = self.prepare(text)?;
        let vector = match &self.remote {
            Some(client) => client
                .embed(&[text])?
                .pop()
                .ok_or_else(|| EmbeddingError::Protocol("empty response".into()))?,
            None => local_hash_embed(text, self.cfg.dim, &self.tokenizer)?,
        };
        self.finish(vector)
    }

    /// Order-preserving batch embedding. The first failure aborts the batch and is
    /// reported with the index of the offending text.
    pub fn embed_batch<S: AsRef<str> + Sync>(&self, texts: &[S]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        let prepared = texts
            .iter()
            .enumerate()
            .map(|(index, t)| {
                self.prepare(t.as_ref()).map_err(|e| EmbeddingError::AtIndex {
                    index,
                    source: Box::new(e),
                })
            })
            .collect::<Result<Vec<&str>, _>>()?;

        let Some(client) = &self.remote else {
            return prepared
                .iter()
                .enumerate()
                .map(|(index, t)| {
                    local_hash_embed(t, self.cfg.dim, &self.tokenizer)
                        .and_then(|v| self.finish(v))
                        .map_err(|e| EmbeddingError::AtIndex {
                            index,
                            source: Box::new(e),
                        })
                })
                .collect();
        };

        let batch_size = self.cfg.batch_size.max(1);
        let batches: Vec<&[&str]> = prepared.chunks(batch_size).collect();
        let results = ordered_map(&batches, self.cfg.max_in_flight, |b, batch| {
            client.embed(batch).map_err(|e| EmbeddingError::AtIndex {
                index: b * batch_size,
                source: Box::new(e),
            })
        });
        let mut out = Vec::with_capacity(texts.len());
        for result in results {
            match result {
                Some(Ok(vectors)) => {
                    for v in vectors {
                        let index = out.len();
                        out.push(self.finish(v).map_err(|e| EmbeddingError::AtIndex {
                            index,
                            source: Box::new(e),
                        })?);
                    }
                }
                Some(Err(e)) => return Err(e),
                None => {}
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn embedder(dim: usize) -> Embedder {
        Embedder::new(EmbeddingBackendConfig::local(dim), Tokenizer::approximate_words()).unwrap()
    }

    #[test]
    fn vector_rejects_non_finite_values() {
        assert!(EmbeddingVector::new(vec![1.0, f32::NAN]).is_err());
        assert!(EmbeddingVector::new(vec![f32::INFINITY]).is_err());
        assert!(EmbeddingVector::new(vec![]).is_err());
    }

    #[test]
    fn local_embeddings_are_unit_norm_and_deterministic() {
        let e = embedder(256);
        let a = e.embed_text("Stop at the limit line.").unwrap();
        let b = e.embed_text("Stop at the limit line.").unwrap();
        assert_eq!(a.values(), b.values());
        assert_eq!(a.dim(), 256);
        assert!((a.norm() - 1.0).abs() <= 1e-6);
    }

    #[test]
    fn empty_text_is_an_input_error() {
        assert!(matches!(
            embedder(8).embed_text("  \n"),
            Err(EmbeddingError::EmptyInput)
        ));
    }

    #[test]
    fn batch_matches_individual_calls_and_reports_index() {
        let e = embedder(64);
        assert!(e.embed_batch::<&str>(&[]).unwrap().is_empty());
        let texts = ["stop sign", "yield to pedestrians", "carpool lane rules"];
        let batch = e.embed_batch(&texts).unwrap();
        for (t, v) in texts.iter().zip(&batch) {
            assert_eq!(&e.embed_text(t).unwrap(), v);
        }
        let err = e.embed_batch(&["ok", " ", "fine"]).unwrap_err();
        assert!(matches!(err, EmbeddingError::AtIndex { index: 1, .. }), "{err}");
    }

    #[test]
    fn oversized_input_is_truncated_not_rejected() {
        let mut cfg = EmbeddingBackendConfig::local(32);
        cfg.max_input_tokens = 3;
        let e = Embedder::new(cfg, Tokenizer::approximate_words()).unwrap();
        assert_eq!(
            e.embed_text("one two three four five").unwrap(),
            e.embed_text("one two three").unwrap()
        );
    }

    #[test]
    fn remote_config_requires_endpoint_and_key_variable() {
        let mut cfg = EmbeddingBackendConfig::remote("", "KEY");
        assert!(matches!(
            Embedder::new(cfg.clone(), Tokenizer::default()),
            Err(EmbeddingError::Config(_))
        ));
        cfg.endpoint_url = "http://localhost:1".into();
        cfg.api_key_env = String::new();
        assert!(matches!(
            Embedder::new(cfg, Tokenizer::default()),
            Err(EmbeddingError::Config(_))
        ));
    }
}
