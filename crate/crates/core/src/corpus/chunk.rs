//! Greedy paragraph packing.
//!
//! Paragraphs (blank-line delimited) are packed into chunks of at most `max_tokens`.
//! A paragraph that alone exceeds the limit is split at sentence boundaries, and a
//! sentence that alone exceeds it is split at token boundaries.

use super::{CorpusError, DocumentSection};
use crate::tokenizer::Tokenizer;

pub const DEFAULT_MAX_CHUNK_TOKENS: usize = 300;
const MIN_CHUNK_TOKENS: usize = 16;

pub fn chunk_text(
    title: &str,
    heading: &str,
    raw: &str,
    max_tokens: usize,
    tokenizer: &Tokenizer,
) -> Result<Vec<DocumentSection>, CorpusError> {
    if max_tokens < MIN_CHUNK_TOKENS {
        return Err(CorpusError::MaxTokensTooSmall(max_tokens));
    }
    if raw.trim().is_empty() {
        return Err(CorpusError::EmptyText);
    }

    let mut units = Vec::new();
    for paragraph in paragraphs(raw) {
        if tokenizer.count_tokens(paragraph) <= max_tokens {
            units.push(paragraph.to_string());
        } else {
            units.extend(split_paragraph(paragraph, max_tokens, tokenizer));
        }
    }

    let mut chunks: Vec<String> = Vec::new();
    let mut current = String::new();
    for unit in units {
        if current.is_empty() {
            current = unit;
            continue;
        }
        let candidate = format!("{current}\n\n{unit}");
        if tokenizer.count_tokens(&candidate) <= max_tokens {
            current = candidate;
        } else {
            chunks.push(std::mem::replace(&mut current, unit));
        }
    }
    if !current.is_empty() {
        chunks.push(current);
    }

    let prefix = format!("{}/{}", slug(title), slug(heading));
    Ok(chunks
        .into_iter()
        .enumerate()
        .map(|(i, content)| DocumentSection {
            id: format!("{prefix}#{}", i + 1),
            title: title.to_string(),
            heading: heading.to_string(),
            token_count: tokenizer.count_tokens(&content),
            content,
        })
        .collect())
}

/// Trimmed, non-empty blank-line-delimited blocks.
fn paragraphs(raw: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start: Option<usize> = None;
    let mut end = 0;
    let mut offset = 0;
    for line in raw.split_inclusive('\n') {
        if line.trim().is_empty() {
            if let Some(s) = start.take() {
                out.push(raw[s..end].trim());
            }
        } else {
            start.get_or_insert(offset);
            end = offset + line.len();
        }
        offset += line.len();
    }
    if let Some(s) = start {
        out.push(raw[s..end].trim());
    }
    out
}

fn split_paragraph(paragraph: &str, max_tokens: usize, tokenizer: &Tokenizer) -> Vec<String> {
    let mut out = Vec::new();
    let mut current: Option<(usize, usize)> = None;
    for (start, end) in sentence_spans(paragraph) {
        let sentence = &paragraph[start..end];
        if tokenizer.count_tokens(sentence) > max_tokens {
            if let Some((s, e)) = current.take() {
                out.push(paragraph[s..e].to_string());
            }
            out.extend(split_at_tokens(sentence, max_tokens, tokenizer));
            continue;
        }
        current = match current {
            Some((s, _)) if tokenizer.count_tokens(&paragraph[s..end]) <= max_tokens => Some((s, end)),
            Some((s, e)) => {
                out.push(paragraph[s..e].to_string());
                Some((start, end))
            }
            None => Some((start, end)),
        };
    }
    if let Some((s, e)) = current {
        out.push(paragraph[s..e].to_string());
    }
    out
}

/// Sentences end after `.`, `!` or `?` (plus closing quotes or brackets) when followed
/// by whitespace or the end of the text.
fn sentence_spans(text: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start: Option<usize> = None;
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if start.is_none() {
            if c.is_whitespace() {
                continue;
            }
            start = Some(i);
        }
        if matches!(c, '.' | '!' | '?') {
            let mut end = i + c.len_utf8();
            while let Some(&(j, q)) = chars.peek() {
                if matches!(q, '"' | '\'' | ')' | ']' | '’' | '”') {
                    end = j + q.len_utf8();
                    chars.next();
                } else {
                    break;
                }
            }
            if chars.peek().is_none_or(|&(_, n)| n.is_whitespace()) {
                spans.push((start.take().unwrap_or(i), end));
            }
        }
    }
    if let Some(s) = start {
        let rest = text[s..].trim_end();
        if !rest.is_empty() {
            spans.push((s, s + rest.len()));
        }
    }
    spans
}

fn split_at_tokens(text: &str, max_tokens: usize, tokenizer: &Tokenizer) -> Vec<String> {
    let mut out = Vec::new();
    let mut rest = text.trim();
    while !rest.is_empty() {
        if tokenizer.count_tokens(rest) <= max_tokens {
            out.push(rest.to_string());
            break;
        }
        let mut head = tokenizer.truncate_to_tokens(rest, max_tokens).trim_end();
        if head.is_empty() {
            let first = rest.chars().next().map_or(rest.len(), char::len_utf8);
            head = &rest[..first];
        }
        out.push(head.to_string());
        rest = rest[head.len()..].trim_start();
    }
    out
}

fn slug(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        if c.is_alphanumeric() {
            out.extend(c.to_lowercase());
        } else if !out.ends_with('-') && !out.is_empty() {
            out.push('-');
        }
    }
    out.trim_end_matches('-').to_string()
}
