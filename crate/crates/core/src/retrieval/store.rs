//! Binary store file.
//!
//! Layout, all integers little-endian u32:
//! `"CFVS"`, version, dim, count, then per entry `id_len`, id bytes (UTF-8) and
//! `dim` f32 values, then a CRC32 of every preceding byte.

use std::io::Write;
use std::path::Path;

use super::{RetrievalError, StoreEntry, VectorStore};
use crate::corpus::CorpusTable;
use crate::embedding::EmbeddingVector;

pub const STORE_MAGIC: &[u8; 4] = b"CFVS";
pub const STORE_FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 16;
const CRC_LEN: usize = 4;

pub fn encode_store(store: &VectorStore) -> Vec<u8> {
    let per_entry: usize = store
        .entries()
        .iter()
        .map(|e| 4 + e.section_id.len() + 4 * store.dim())
        .sum();
    let mut buf = Vec::with_capacity(HEADER_LEN + per_entry + CRC_LEN);
    buf.extend_from_slice(STORE_MAGIC);
    buf.extend_from_slice(&STORE_FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(store.dim() as u32).to_le_bytes());
    buf.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for entry in store.entries() {
        buf.extend_from_slice(&(entry.section_id.len() as u32).to_le_bytes());
        buf.extend_from_slice(entry.section_id.as_bytes());
        for value in entry.vector.values() {
            buf.extend_from_slice(&value.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], RetrievalError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| RetrievalError::Corrupt(format!("unexpected end of data at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, RetrievalError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn decode_store(bytes: &[u8]) -> Result<VectorStore, RetrievalError> {
    if bytes.len() < HEADER_LEN + CRC_LEN {
        return Err(RetrievalError::Corrupt(format!(
            "file too short ({} bytes)",
            bytes.len()
        )));
    }
    if &bytes[..4] != STORE_MAGIC {
        return Err(RetrievalError::Corrupt("bad magic bytes".into()));
    }
    let (payload, tail) = bytes.split_at(bytes.len() - CRC_LEN);
    let stored = u32::from_le_bytes([tail[0], tail[1], tail[2], tail[3]]);
    let actual = crc32fast::hash(payload);
    if stored != actual {
        return Err(RetrievalError::Corrupt(format!(
            "checksum mismatch (stored {stored:08x}, computed {actual:08x})"
        )));
    }

    let mut r = Reader { bytes: payload, pos: 4 };
    let version = r.u32()?;
    if version != STORE_FORMAT_VERSION {
        return Err(RetrievalError::VersionMismatch {
            found: version,
            expected: STORE_FORMAT_VERSION,
        });
    }
    let dim = r.u32()? as usize;
    let count = r.u32()? as usize;
    if dim == 0 {
        return Err(RetrievalError::Corrupt("zero dimension".into()));
    }
    let mut entries = Vec::with_capacity(count.min(payload.len() / (4 + 4 * dim)));
    for i in 0..count {
        let id_len = r.u32()? as usize;
        let id = std::str::from_utf8(r.take(id_len)?)
            .map_err(|_| RetrievalError::Corrupt(format!("entry {i}: id is not UTF-8")))?
            .to_string();
        let raw = r.take(
            dim.checked_mul(4)
                .ok_or_else(|| RetrievalError::Corrupt("dimension overflow".into()))?,
        )?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let vector = EmbeddingVector::new(values).map_err(|e| RetrievalError::Corrupt(format!("entry {i}: {e}")))?;
        entries.push(StoreEntry { section_id: id, vector });
    }
    if r.pos != payload.len() {
        return Err(RetrievalError::Corrupt(format!(
            "{} trailing bytes after {count} entries",
            payload.len() - r.pos
        )));
    }
    VectorStore::new(dim, entries).map_err(|e| RetrievalError::Corrupt(e.to_string()))
}

/// Writes via a sibling temporary file and rename so readers never see a partial store.
pub fn save_store(store: &VectorStore, path: &Path) -> Result<(), RetrievalError> {
    let io = |source| RetrievalError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(io)?;
    }
    let mut tmp_name = path.as_os_str().to_owned();
    tmp_name.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp_name);
    let mut file = std::fs::File::create(&tmp).map_err(io)?;
    file.write_all(&encode_store(store)).map_err(io)?;
    file.sync_all().map_err(io)?;
    drop(file);
    std::fs::rename(&tmp, path).map_err(io)
}

pub fn load_store(path: &Path) -> Result<VectorStore, RetrievalError> {
    let bytes = std::fs::read(path).map_err(|source| match source.kind() {
        std::io::ErrorKind::NotFound => RetrievalError::StoreNotFound(path.to_path_buf()),
        _ => RetrievalError::Io {
            path: path.to_path_buf(),
            source,
        },
    })?;
    decode_store(&bytes)
}

/// Inspection export: title, heading and the vector as a bracketed list.
/// Sections missing from the corpus get empty title and heading.
pub fn export_csv(store: &VectorStore, corpus: &CorpusTable, path: &Path) -> Result<(), RetrievalError> {
    let io = |source| RetrievalError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut writer = csv::Writer::from_path(path).map_err(|e| io(e.into()))?;
    writer
        .write_record(["id", "title", "heading", "embedding"])
        .map_err(|e| io(e.into()))?;
    for entry in store.entries() {
        let (title, heading) = corpus
            .get(&entry.section_id)
            .map_or(("", ""), |s| (s.title.as_str(), s.heading.as_str()));
        let values: Vec<String> = entry.vector.values().iter().map(|v| v.to_string()).collect();
        let vector = format!("[{}]", values.join(", "));
        writer
            .write_record([entry.section_id.as_str(), title, heading, vector.as_str()])
            .map_err(|e| io(e.into()))?;
    }
    writer.flush().map_err(io)
}
