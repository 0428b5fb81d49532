use std::time::Duration;

use serde_json::Value;

use super::{
    Completion, CompletionBackend, CompletionBackendConfig, CompletionRequest, GenerationError, RequestContext,
};
use crate::http::{error_message, CallError, JsonEndpoint};

/// Client for a completions endpoint returning `choices[0].text`.
#[derive(Debug)]
pub struct RemoteCompletionBackend {
    endpoint: JsonEndpoint,
}

impl RemoteCompletionBackend {
    pub fn new(cfg: &CompletionBackendConfig) -> Result<Self, GenerationError> {
        let endpoint = JsonEndpoint::new(
            &cfg.endpoint_url,
            &cfg.api_key_env,
            cfg.retry.clone(),
            cfg.fixture_dir.as_deref(),
            cfg.fixture_mode,
            Duration::from_secs(cfg.timeout_secs.max(1)),
        )
        .map_err(|e| GenerationError::Config(e.to_string()))?;
        Ok(Self { endpoint })
    }
}

impl CompletionBackend for RemoteCompletionBackend {
    fn complete(&self, req: &CompletionRequest, _: &RequestContext) -> Result<Completion, GenerationError> {
        let body = self.endpoint.post(&req.wire_body()).map_err(|e| match e {
            CallError::Transport { attempts, message } => GenerationError::Transport { attempts, message },
            CallError::Status { status, body } => GenerationError::Rejected {
                status: Some(status),
                reason: error_message(&body),
            },
            CallError::Config(m) => GenerationError::Config(m),
            other @ (CallError::FixtureMiss { .. } | CallError::FixtureIo(_)) => {
                GenerationError::Fixture(other.to_string())
            }
        })?;
        parse_response(&body)
    }
}

pub(super) fn parse_response(body: &str) -> Result<Completion, GenerationError> {
    let value: Value =
        serde_json::from_str(body).map_err(|e| GenerationError::Protocol(format!("invalid JSON: {e}")))?;
    let choice = value
        .pointer("/choices/0")
        .ok_or_else(|| GenerationError::Protocol("response has no choices".into()))?;
    let text = choice
        .get("text")
        .and_then(Value::as_str)
        .ok_or_else(|| GenerationError::Protocol("choices[0].text missing or not a string".into()))?;
    let finish_reason = choice
        .get("finish_reason")
        .and_then(Value::as_str)
        .unwrap_or("")
        .to_string();
    if finish_reason == "content_filter" {
        return Err(GenerationError::Rejected {
            status: None,
            reason: "content_filter".into(),
        });
    }
    Ok(Completion {
        text: text.to_string(),
        finish_reason,
    })
}
