//! Exact similarity search over an in-memory vector store.

mod store;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::CorpusTable;
use crate::embedding::{Embedder, EmbeddingError, EmbeddingVector};

pub use store::{decode_store, encode_store, export_csv, load_store, save_store, STORE_FORMAT_VERSION, STORE_MAGIC};

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("zero-norm vector cannot be compared by cosine similarity")]
    ZeroNorm,
    #[error("duplicate section id `{0}` in store")]
    DuplicateId(String),
    #[error("store dimension must be positive")]
    ZeroDimension,
    #[error("store not found: {0}")]
    StoreNotFound(std::path::PathBuf),
    #[error("corrupt store file: {0}")]
    Corrupt(String),
    #[error("unsupported store format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SimilarityMetric {
    #[default]
    Cosine,
    Dot,
}

impl std::str::FromStr for SimilarityMetric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cosine" => Ok(Self::Cosine),
            "dot" => Ok(Self::Dot),
            other => Err(format!("unknown metric `{other}` (expected cosine or dot)")),
        }
    }
}

fn dot_f64(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| f64::from(*x) * f64::from(*y)).sum()
}

fn norm_f64(a: &[f32]) -> f64 {
    dot_f64(a, a).sqrt()
}

pub fn similarity(a: &EmbeddingVector, b: &EmbeddingVector, metric: SimilarityMetric) -> Result<f64, RetrievalError> {
    if a.dim() != b.dim() {
        return Err(RetrievalError::DimensionMismatch {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    let dot = dot_f64(a.values(), b.values());
    match metric {
        SimilarityMetric::Dot => Ok(dot),
        SimilarityMetric::Cosine => {
            let denom = norm_f64(a.values()) * norm_f64(b.values());
            if denom == 0.0 {
                return Err(RetrievalError::ZeroNorm);
            }
            Ok((dot / denom).clamp(-1.0, 1.0))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoreEntry {
    pub section_id: String,
    pub vector: EmbeddingVector,
}

/// Immutable set of section embeddings sharing one dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorStore {
    dim: usize,
    entries: Vec<StoreEntry>,
    metric_default: SimilarityMetric,
}

impl VectorStore {
    pub fn new(dim: usize, entries: Vec<StoreEntry>) -> Result<Self, RetrievalError> {
        if dim == 0 {
            return Err(RetrievalError::ZeroDimension);
        }
        let mut seen = HashSet::with_capacity(entries.len());
        for entry in &entries {
            if entry.vector.dim() != dim {
                return Err(RetrievalError::DimensionMismatch {
                    expected: dim,
                    actual: entry.vector.dim(),
                });
            }
            if !seen.insert(entry.section_id.as_str()) {
                return Err(RetrievalError::DuplicateId(entry.section_id.clone()));
            }
        }
        Ok(Self {
            dim,
            entries,
            metric_default: SimilarityMetric::Cosine,
        })
    }

    pub fn with_metric_default(mut self, metric: SimilarityMetric) -> Self {
        self.metric_default = metric;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[StoreEntry] {
        &self.entries
    }

    pub fn metric_default(&self) -> SimilarityMetric {
        self.metric_default
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, section_id: &str) -> Option<&EmbeddingVector> {
        self.entries
            .iter()
            .find(|e| e.section_id == section_id)
            .map(|e| &e.vector)
    }
}

/// Embeds every section's content, in corpus order.
pub fn build_store(corpus: &CorpusTable, embedder: &Embedder) -> Result<VectorStore, RetrievalError> {
    let texts: Vec<&str> = corpus.sections().iter().map(|s| s.content.as_str()).collect();
    let vectors = embedder.embed_batch(&texts)?;
    let entries = corpus
        .sections()
        .iter()
        .zip(vectors)
        .map(|(s, vector)| StoreEntry {
            section_id: s.id.clone(),
            vector,
        })
        .collect();
    VectorStore::new(embedder.dim(), entries)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedSection {
    pub section_id: String,
    pub score: f64,
    /// 1-based.
    pub rank: usize,
}

/// Every store entry ordered by descending score; equal scores fall back to
/// ascending section id.
pub fn rank_sections(
    query: &EmbeddingVector,
    store: &VectorStore,
    metric: SimilarityMetric,
) -> Result<Vec<RankedSection>, RetrievalError> {
    if query.dim() != store.dim() {
        return Err(RetrievalError::DimensionMismatch {
            expected: store.dim(),
            actual: query.dim(),
        });
    }
    let mut scored = store
        .entries()
        .iter()
        .map(|e| similarity(query, &e.vector, metric).map(|s| (e.section_id.as_str(), s)))
        .collect::<Result<Vec<_>, _>>()?;
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    Ok(scored
        .into_iter()
        .enumerate()
        .map(|(i, (id, score))| RankedSection {
            section_id: id.to_string(),
            score,
            rank: i + 1,
        })
        .collect())
}
