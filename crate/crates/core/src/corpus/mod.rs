//! The document library as a table of sections.
//!
//! On disk a corpus is UTF-8 CSV with the header `id,title,heading,content,tokens`,
//! or line-delimited JSON records with the same fields when the file extension is
//! `.jsonl` / `.ndjson`. The `tokens` column is advisory: it is always recomputed
//! with the active tokenizer on load.

mod chunk;
mod format;

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tokenizer::{Tokenizer, TokenizerSpec};

pub use chunk::{chunk_text, DEFAULT_MAX_CHUNK_TOKENS};
pub use format::{render_content, render_text, FormattingMode};

const COLUMNS: [&str; 5] = ["id", "title", "heading", "content", "tokens"];

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("corpus file not found: {}", .0.display())]
    NotFound(PathBuf),
    #[error("cannot access {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corpus header is missing column `{0}`")]
    MissingColumn(&'static str),
    #[error("row {row}: {reason}")]
    Row { row: usize, reason: String },
    #[error("row {row}: duplicate section id `{id}`")]
    DuplicateId { row: usize, id: String },
    #[error("cannot chunk empty text")]
    EmptyText,
    #[error("max_tokens must be at least 16, got {0}")]
    MaxTokensTooSmall(usize),
}

/// One chunk of the document library.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentSection {
    pub id: String,
    pub title: String,
    pub heading: String,
    pub content: String,
    pub token_count: usize,
}

/// Validated, immutable section table.
#[derive(Debug, Clone)]
pub struct CorpusTable {
    sections: Vec<DocumentSection>,
    tokenizer_spec: TokenizerSpec,
    by_id: HashMap<String, usize>,
}

impl PartialEq for CorpusTable {
    fn eq(&self, other: &Self) -> bool {
        self.sections == other.sections && self.tokenizer_spec == other.tokenizer_spec
    }
}

impl CorpusTable {
    /// Validates `sections` and recomputes every token count with `tokenizer`.
    pub fn new(sections: Vec<DocumentSection>, tokenizer: &Tokenizer) -> Result<Self, CorpusError> {
        let mut by_id = HashMap::with_capacity(sections.len());
        let mut checked = Vec::with_capacity(sections.len());
        for (idx, mut section) in sections.into_iter().enumerate() {
            let row = idx + 1;
            if section.id.trim().is_empty() {
                return Err(CorpusError::Row {
                    row,
                    reason: "empty id".into(),
                });
            }
            if section.content.trim().is_empty() {
                return Err(CorpusError::Row {
                    row,
                    reason: "empty content".into(),
                });
            }
            if by_id.insert(section.id.clone(), idx).is_some() {
                return Err(CorpusError::DuplicateId { row, id: section.id });
            }
            section.token_count = tokenizer.count_tokens(&section.content);
            checked.push(section);
        }
        Ok(Self {
            sections: checked,
            tokenizer_spec: tokenizer.spec().clone(),
            by_id,
        })
    }

    pub fn sections(&self) -> &[DocumentSection] {
        &self.sections
    }

    pub fn tokenizer_spec(&self) -> &TokenizerSpec {
        &self.tokenizer_spec
    }

    pub fn get(&self, id: &str) -> Option<&DocumentSection> {
        self.by_id.get(id).map(|&i| &self.sections[i])
    }

    pub fn len(&self) -> usize {
        self.sections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sections.is_empty()
    }

    /// Counts of sections per `bin_width`-token bucket, keyed by bucket start.
    pub fn token_histogram(&self, bin_width: usize) -> Vec<(usize, usize)> {
        let bin_width = bin_width.max(1);
        let mut bins = std::collections::BTreeMap::new();
        for s in &self.sections {
            *bins.entry(s.token_count / bin_width * bin_width).or_insert(0) += 1;
        }
        bins.into_iter().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum FileFormat {
    Csv,
    JsonLines,
}

fn file_format(path: &Path) -> FileFormat {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .as_deref()
    {
        Some("jsonl" | "ndjson") => FileFormat::JsonLines,
        _ => FileFormat::Csv,
    }
}

#[derive(Debug, Deserialize, Serialize)]
struct RecordRow {
    id: String,
    title: String,
    heading: String,
    content: String,
    #[serde(default)]
    tokens: Option<serde_json::Value>,
}

fn open(path: &Path) -> Result<File, CorpusError> {
    File::open(path).map_err(|source| match source.kind() {
        std::io::ErrorKind::NotFound => CorpusError::NotFound(path.to_path_buf()),
        _ => CorpusError::Io {
            path: path.to_path_buf(),
            source,
        },
    })
}

/// Reads a corpus file and recomputes token counts with `tokenizer`.
pub fn load_corpus(path: &Path, tokenizer: &Tokenizer) -> Result<CorpusTable, CorpusError> {
    let file = open(path)?;
    let sections = match file_format(path) {
        FileFormat::Csv => read_csv(file)?,
        FileFormat::JsonLines => read_json_lines(file, path)?,
    };
    CorpusTable::new(sections, tokenizer)
}

fn read_csv(file: File) -> Result<Vec<DocumentSection>, CorpusError> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(file);
    let headers = reader
        .headers()
        .map_err(|e| CorpusError::Row {
            row: 0,
            reason: format!("unreadable header: {e}"),
        })?
        .clone();
    let mut index = [0usize; 5];
    for (slot, column) in index.iter_mut().zip(COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h.trim() == column)
            .ok_or(CorpusError::MissingColumn(column))?;
    }
    let [id, title, heading, content, _] = index;

    let mut sections = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let row = idx + 1;
        let record = record.map_err(|e| CorpusError::Row {
            row,
            reason: e.to_string(),
        })?;
        let field = |i: usize, name: &str| {
            record.get(i).map(str::to_owned).ok_or_else(|| CorpusError::Row {
                row,
                reason: format!("missing column `{name}`"),
            })
        };
        let section = DocumentSection {
            id: field(id, "id")?,
            title: field(title, "title")?,
            heading: field(heading, "heading")?,
            content: field(content, "content")?,
            token_count: 0,
        };
        if section.content.trim().is_empty() {
            return Err(CorpusError::Row {
                row,
                reason: "empty content".into(),
            });
        }
        sections.push(section);
    }
    Ok(sections)
}

fn read_json_lines(file: File, path: &Path) -> Result<Vec<DocumentSection>, CorpusError> {
    let mut sections = Vec::new();
    let mut row = 0;
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        row += 1;
        let rec: RecordRow = serde_json::from_str(&line).map_err(|e| CorpusError::Row {
            row,
            reason: e.to_string(),
        })?;
        if rec.content.trim().is_empty() {
            return Err(CorpusError::Row {
                row,
                reason: "empty content".into(),
            });
        }
        sections.push(DocumentSection {
            id: rec.id,
            title: rec.title,
            heading: rec.heading,
            content: rec.content,
            token_count: 0,
        });
    }
    Ok(sections)
}

/// Writes `table` in the format implied by the extension of `path`.
pub fn write_corpus(table: &CorpusTable, path: &Path) -> Result<(), CorpusError> {
    let io_err = |source: std::io::Error| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::create(path).map_err(io_err)?;
    match file_format(path) {
        FileFormat::Csv => {
            let mut writer = csv::Writer::from_writer(file);
            let to_io = |e: csv::Error| io_err(e.into());
            writer.write_record(COLUMNS).map_err(to_io)?;
            for s in table.sections() {
                writer
                    .write_record([&s.id, &s.title, &s.heading, &s.content, &s.token_count.to_string()])
                    .map_err(to_io)?;
            }
            writer.flush().map_err(io_err)?;
        }
        FileFormat::JsonLines => {
            let mut out = BufWriter::new(file);
            for s in table.sections() {
                let rec = RecordRow {
                    id: s.id.clone(),
                    title: s.title.clone(),
                    heading: s.heading.clone(),
                    content: s.content.clone(),
                    tokens: Some(s.token_count.into()),
                };
                let line = serde_json::to_string(&rec).map_err(|e| io_err(e.into()))?;
                writeln!(out, "{line}").map_err(io_err)?;
            }
            out.flush().map_err(io_err)?;
        }
    }
    Ok(())
}
