use std::time::Duration;

use serde::Serialize;
use serde_json::Value;

use super::{EmbeddingBackendConfig, EmbeddingError, EmbeddingVector};
use crate::http::{error_message, CallError, JsonEndpoint};

#[derive(Debug)]
pub(super) struct RemoteEmbeddingClient {
    endpoint: JsonEndpoint,
    model: String,
    dim: usize,
}

#[derive(Serialize)]
struct RequestBody<'a> {
    model: &'a str,
    input: &'a [&'a str],
}

impl RemoteEmbeddingClient {
    pub(super) fn new(cfg: &EmbeddingBackendConfig) -> Result<Self, EmbeddingError> {
        let endpoint = JsonEndpoint::new(
            &cfg.endpoint_url,
            &cfg.api_key_env,
            cfg.retry.clone(),
            cfg.fixture_dir.as_deref(),
            cfg.fixture_mode,
            Duration::from_secs(cfg.timeout_secs.max(1)),
        )
        .map_err(|e| EmbeddingError::Config(e.to_string()))?;
        Ok(Self {
            endpoint,
            model: cfg.model_name.clone(),
            dim: cfg.dim,
        })
    }

    pub(super) fn embed(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        let body = serde_json::to_string(&RequestBody {
            model: &self.model,
            input: texts,
        })
        .map_err(|e| EmbeddingError::Protocol(e.to_string()))?;
        let response = self.endpoint.post(&body).map_err(|e| match e {
            CallError::Transport { attempts, message } => EmbeddingError::Backend { attempts, message },
            CallError::Status { status, body } => EmbeddingError::Rejected {
                status,
                message: error_message(&body),
            },
            CallError::Config(m) => EmbeddingError::Config(m),
            other @ (CallError::FixtureMiss { .. } | CallError::FixtureIo(_)) => {
                EmbeddingError::Fixture(other.to_string())
            }
        })?;
        parse_response(&response, texts.len(), self.dim)
    }
}

/// Accepts `{"data": [{"embedding": [...], "index": n}, ...]}` or the bare list.
pub(super) fn parse_response(body: &str, expected: usize, dim: usize) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
    let protocol = |m: String| EmbeddingError::Protocol(m);
    let value: Value = serde_json::from_str(body).map_err(|e| protocol(format!("invalid JSON: {e}")))?;
    let items = match &value {
        Value::Array(items) => items,
        Value::Object(map) => map
            .get("data")
            .and_then(Value::as_array)
            .ok_or_else(|| protocol("missing `data` array".into()))?,
        _ => return Err(protocol("expected an object or array".into())),
    };
    if items.len() != expected {
        return Err(protocol(format!("expected {expected} embeddings, got {}", items.len())));
    }

    let mut slots: Vec<Option<EmbeddingVector>> = vec![None; expected];
    for (position, item) in items.iter().enumerate() {
        let index = match item.get("index") {
            None => position,
            Some(v) => v
                .as_u64()
                .map(|i| i as usize)
                .filter(|&i| i < expected)
                .ok_or_else(|| protocol(format!("item {position}: bad index {v}")))?,
        };
        let raw = item
            .get("embedding")
            .and_then(Value::as_array)
            .ok_or_else(|| protocol(format!("item {position}: missing `embedding` array")))?;
        if raw.len() != dim {
            return Err(protocol(format!(
                "item {position}: expected {dim} dimensions, got {}",
                raw.len()
            )));
        }
        let values = raw
            .iter()
            .map(|v| v.as_f64().map(|f| f as f32))
            .collect::<Option<Vec<f32>>>()
            .ok_or_else(|| protocol(format!("item {position}: non-numeric value")))?;
        let vector = EmbeddingVector::new(values).map_err(|e| protocol(format!("item {position}: {e}")))?;
        if slots[index].replace(vector).is_some() {
            return Err(protocol(format!("duplicate index {index}")));
        }
    }
    Ok(slots.into_iter().map(|s| s.expect("every index filled")).collect())
}
