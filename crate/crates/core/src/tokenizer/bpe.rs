//! Byte-level BPE over a tiktoken-style rank table.
//!
//! The vocabulary file holds one `<base64 token> <rank>` pair per line. Text is first
//! split with the cl100k pre-tokenization pattern, then each piece is merged pairwise,
//! always merging the adjacent pair whose concatenation has the lowest rank.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Mutex;

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use fancy_regex::Regex;

use super::TokenizerError;

const CL100K_PATTERN: &str = concat!(
    r"(?i:'s|'t|'re|'ve|'m|'ll|'d)",
    r"|[^\r\n\p{L}\p{N}]?\p{L}+",
    r"|\p{N}{1,3}",
    r"| ?[^\s\p{L}\p{N}]+[\r\n]*",
    r"|\s*[\r\n]+",
    r"|\s+(?!\S)",
    r"|\s+",
);

/// Pieces above this size are merged without caching.
const CACHE_PIECE_MAX: usize = 64;
const CACHE_CAPACITY: usize = 1 << 16;

#[derive(Debug)]
pub struct BpeVocab {
    ranks: HashMap<Vec<u8>, u32>,
    pattern: Regex,
    /// Merge results per piece; prompts repeat the same words constantly.
    cache: Mutex<HashMap<Vec<u8>, Vec<usize>>>,
}

impl BpeVocab {
    pub fn from_file(path: &Path) -> Result<Self, TokenizerError> {
        let text = std::fs::read_to_string(path).map_err(|source| TokenizerError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self, TokenizerError> {
        let parse_err = |line: usize, reason: String| TokenizerError::Parse {
            origin: origin.to_string(),
            line,
            reason,
        };
        let mut ranks = HashMap::new();
        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split_whitespace();
            let (Some(token), Some(rank), None) = (fields.next(), fields.next(), fields.next()) else {
                return Err(parse_err(line_no, "expected `<base64> <rank>`".into()));
            };
            let bytes = STANDARD
                .decode(token)
                .map_err(|e| parse_err(line_no, format!("bad base64: {e}")))?;
            let rank: u32 = rank.parse().map_err(|e| parse_err(line_no, format!("bad rank: {e}")))?;
            if ranks.insert(bytes, rank).is_some() {
                return Err(parse_err(line_no, "duplicate token".into()));
            }
        }
        if ranks.is_empty() {
            return Err(parse_err(0, "empty vocabulary".into()));
        }
        let pattern = Regex::new(CL100K_PATTERN).expect("pre-tokenization pattern compiles");
        Ok(Self {
            ranks,
            pattern,
            cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn len(&self) -> usize {
        self.ranks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranks.is_empty()
    }

    pub fn count(&self, text: &str) -> usize {
        let mut total = 0;
        self.for_each_piece(text, |piece, _| total += self.merge_cached(piece).len() - 1);
        total
    }

    /// Byte spans `(start, end)` of every token in `text`.
    pub fn token_spans(&self, text: &str) -> Vec<(usize, usize)> {
        let mut spans = Vec::new();
        self.for_each_piece(text, |piece, offset| {
            let bounds = self.merge_cached(piece);
            spans.extend(bounds.windows(2).map(|w| (offset + w[0], offset + w[1])));
        });
        spans
    }

    pub fn token_strings(&self, text: &str) -> Vec<String> {
        self.token_spans(text)
            .into_iter()
            .map(|(s, e)| String::from_utf8_lossy(&text.as_bytes()[s..e]).into_owned())
            .collect()
    }

    pub fn truncate<'a>(&self, text: &'a str, limit: usize) -> &'a str {
        let spans = self.token_spans(text);
        if spans.len() <= limit {
            return text;
        }
        // Re-tokenizing a prefix can shift piece boundaries, so verify and back off.
        let mut keep = limit;
        while keep > 0 {
            let mut end = spans[keep - 1].1;
            while !text.is_char_boundary(end) {
                end -= 1;
            }
            let prefix = &text[..end];
            if self.count(prefix) <= limit {
                return prefix;
            }
            keep -= 1;
        }
        ""
    }

    fn for_each_piece(&self, text: &str, mut f: impl FnMut(&[u8], usize)) {
        let mut covered = 0;
        for m in self.pattern.find_iter(text) {
            match m {
                Ok(m) => {
                    f(&text.as_bytes()[m.start()..m.end()], m.start());
                    covered = m.end();
                }
                // Backtracking limit: treat the unmatched remainder as one piece.
                Err(_) => break,
            }
        }
        if covered < text.len() {
            f(&text.as_bytes()[covered..], covered);
        }
    }

    fn rank_of(&self, bytes: &[u8]) -> u32 {
        self.ranks.get(bytes).copied().unwrap_or(u32::MAX)
    }

    fn merge_cached(&self, piece: &[u8]) -> Vec<usize> {
        if piece.len() > CACHE_PIECE_MAX {
            return self.merge(piece);
        }
        let lock = || self.cache.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(hit) = lock().get(piece) {
            return hit.clone();
        }
        let bounds = self.merge(piece);
        let mut cache = lock();
        if cache.len() >= CACHE_CAPACITY {
            cache.clear();
        }
        cache.insert(piece.to_vec(), bounds.clone());
        bounds
    }

    /// Token boundaries within `piece`, including `0` and `piece.len()`.
    fn merge(&self, piece: &[u8]) -> Vec<usize> {
        if piece.len() < 2 || self.ranks.contains_key(piece) {
            return vec![0, piece.len()];
        }
        // parts[i] = (start offset, rank of merging part i with part i+1)
        let mut parts: Vec<(usize, u32)> = (0..piece.len() - 1)
            .map(|i| (i, self.rank_of(&piece[i..i + 2])))
            .collect();
        parts.push((piece.len() - 1, u32::MAX));
        parts.push((piece.len(), u32::MAX));

        let pair_rank = |parts: &[(usize, u32)], i: usize| -> u32 {
            if i + 3 < parts.len() {
                self.rank_of(&piece[parts[i].0..parts[i + 3].0])
            } else {
                u32::MAX
            }
        };

        loop {
            let (best, rank) = parts[..parts.len() - 1]
                .iter()
                .enumerate()
                .fold((0, u32::MAX), |acc, (i, &(_, r))| if r < acc.1 { (i, r) } else { acc });
            if rank == u32::MAX {
                break;
            }
            if best > 0 {
                parts[best - 1].1 = pair_rank(&parts, best - 1);
            }
            parts[best].1 = pair_rank(&parts, best);
            parts.remove(best + 1);
        }
        parts.into_iter().map(|(start, _)| start).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_vocab() -> BpeVocab {
        let mut lines: Vec<String> = (0u8..=255).map(|b| format!("{} {}", STANDARD.encode([b]), b)).collect();
        for (i, tok) in ["st", "op", "stop", " s", " st", " stop"].iter().enumerate() {
            lines.push(format!("{} {}", STANDARD.encode(tok), 256 + i));
        }
        BpeVocab::parse(&lines.join("\n"), "toy").unwrap()
    }

    #[test]
    fn merges_by_lowest_rank() {
        let v = toy_vocab();
        assert_eq!(v.count("stop"), 1);
        assert_eq!(v.count("stop stop"), 2);
        assert_eq!(v.token_strings("stops"), vec!["stop", "s"]);
    }

    #[test]
    fn rejects_malformed_lines() {
        assert!(matches!(
            BpeVocab::parse("AA== notanumber", "x"),
            Err(TokenizerError::Parse { line: 1, .. })
        ));
        assert!(matches!(
            BpeVocab::parse("!!! 1", "x"),
            Err(TokenizerError::Parse { .. })
        ));
        assert!(matches!(BpeVocab::parse("", "x"), Err(TokenizerError::Parse { .. })));
    }

    #[test]
    fn truncation_lands_on_char_boundary() {
        let v = toy_vocab();
        // "é" is two bytes and has no merge, so it spans two byte tokens.
        let cut = v.truncate("é stop", 1);
        assert_eq!(cut, "");
        let cut = v.truncate("é stop", 2);
        assert_eq!(cut, "é");
    }
}
