use std::collections::HashMap;
use std::path::Path;

use serde::Deserialize;

use super::{Completion, CompletionBackend, CompletionRequest, GenerationError, RequestContext};
use crate::http::body_key;

/// Replays canned responses from a line-delimited `{key, response_text}` file.
///
/// Keys are tried in order: `<condition>:<question id>`, `<question id>`, then the
/// SHA-256 hex digest of the prompt.
#[derive(Debug, Clone, Default)]
pub struct ScriptedBackend {
    responses: HashMap<String, String>,
}

#[derive(Deserialize)]
struct Record {
    key: String,
    response_text: String,
}

pub fn prompt_key(prompt: &str) -> String {
    body_key(prompt)
}

impl ScriptedBackend {
    pub fn from_file(path: &Path) -> Result<Self, GenerationError> {
        let script_err = |reason: String| GenerationError::Script {
            path: path.to_path_buf(),
            reason,
        };
        let text = std::fs::read_to_string(path).map_err(|e| script_err(e.to_string()))?;
        Self::parse(&text).map_err(script_err)
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let mut responses = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let record: Record = serde_json::from_str(line).map_err(|e| format!("line {}: {e}", i + 1))?;
            if responses.insert(record.key.clone(), record.response_text).is_some() {
                return Err(format!("line {}: duplicate key `{}`", i + 1, record.key));
            }
        }
        Ok(Self { responses })
    }

    pub fn from_pairs<K: Into<String>, V: Into<String>>(pairs: impl IntoIterator<Item = (K, V)>) -> Self {
        Self {
            responses: pairs.into_iter().map(|(k, v)| (k.into(), v.into())).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    fn candidate_keys(req: &CompletionRequest, ctx: &RequestContext) -> Vec<String> {
        let mut keys = Vec::with_capacity(3);
        if let Some(id) = ctx.question_id {
            if let Some(condition) = &ctx.condition {
                keys.push(format!("{condition}:{id}"));
            }
            keys.push(id.to_string());
        }
        keys.push(prompt_key(&req.prompt));
        keys
    }
}

impl CompletionBackend for ScriptedBackend {
    fn complete(&self, req: &CompletionRequest, ctx: &RequestContext) -> Result<Completion, GenerationError> {
        let keys = Self::candidate_keys(req, ctx);
        keys.iter()
            .find_map(|k| self.responses.get(k))
            .map(|text| Completion {
                text: text.clone(),
                finish_reason: "stop".into(),
            })
            .ok_or(GenerationError::ScriptMiss { keys })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx(id: Option<u32>, condition: Option<&str>) -> RequestContext {
        RequestContext {
            question_id: id,
            condition: condition.map(str::to_string),
        }
    }

    #[test]
    fn lookup_order() {
        let req = CompletionRequest::new("prompt text");
        let backend = ScriptedBackend::from_pairs([
            ("500:25", "No faster than 65 mph."),
            ("25", "Between 65 mph and 70 mph."),
            (prompt_key("prompt text").as_str(), "by hash"),
        ]);
        let text = |c: RequestContext| backend.complete(&req, &c).unwrap().text;
        assert_eq!(text(ctx(Some(25), Some("500"))), "No faster than 65 mph.");
        assert_eq!(text(ctx(Some(25), Some("none"))), "Between 65 mph and 70 mph.");
        assert_eq!(text(ctx(Some(7), None)), "by hash");
        assert_eq!(text(ctx(None, None)), "by hash");
    }

    #[test]
    fn miss_names_every_key_tried() {
        let backend = ScriptedBackend::default();
        let err = backend
            .complete(&CompletionRequest::new("p"), &ctx(Some(3), Some("1200")))
            .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("1200:3") && msg.contains(&prompt_key("p")), "{msg}");
    }

    #[test]
    fn parse_rejects_duplicates_and_garbage() {
        assert!(ScriptedBackend::parse(
            "{\"key\":\"1\",\"response_text\":\"a\"}\n{\"key\":\"1\",\"response_text\":\"b\"}"
        )
        .unwrap_err()
        .contains("duplicate"));
        assert!(ScriptedBackend::parse("oops").is_err());
        assert_eq!(ScriptedBackend::parse("\n").unwrap().len(), 0);
    }
}
