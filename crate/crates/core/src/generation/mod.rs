//! Completion backends: a remote completions endpoint and a scripted replay backend.

mod remote;
mod scripted;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::http::{FixtureMode, RetryPolicy};

pub use remote::RemoteCompletionBackend;
pub use scripted::{prompt_key, ScriptedBackend};

#[derive(Debug, Error)]
pub enum GenerationError {
    #[error("invalid completion request: {0}")]
    InvalidRequest(String),
    #[error("invalid completion configuration: {0}")]
    Config(String),
    #[error("completion backend failed after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("completion rejected: {reason}")]
    Rejected { status: Option<u16>, reason: String },
    #[error("malformed completion response: {0}")]
    Protocol(String),
    #[error("no scripted response for any of the keys [{}]", keys.join(", "))]
    ScriptMiss { keys: Vec<String> },
    #[error("scripted fixture {path}: {reason}")]
    Script { path: PathBuf, reason: String },
    #[error("completion fixture: {0}")]
    Fixture(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub prompt: String,
    pub model_name: String,
    pub temperature: f64,
    pub max_completion_tokens: usize,
    pub stop_sequences: Vec<String>,
}

#[derive(Serialize)]
struct WireBody<'a> {
    model: &'a str,
    prompt: &'a str,
    temperature: f64,
    max_tokens: usize,
    stop: Option<&'a [String]>,
}

impl CompletionRequest {
    pub fn new(prompt: impl Into<String>) -> Self {
        Self {
            prompt: prompt.into(),
            model_name: "text-davinci-003".into(),
            temperature: 0.0,
            max_completion_tokens: 64,
            stop_sequences: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), GenerationError> {
        if self.prompt.is_empty() {
            return Err(GenerationError::InvalidRequest("empty prompt".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(GenerationError::InvalidRequest(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if self.max_completion_tokens == 0 {
            return Err(GenerationError::InvalidRequest(
                "max_completion_tokens must be positive".into(),
            ));
        }
        if self.model_name.trim().is_empty() {
            return Err(GenerationError::InvalidRequest("empty model name".into()));
        }
        Ok(())
    }

    /// JSON body sent to the remote endpoint. Byte-identical for equal requests.
    pub fn wire_body(&self) -> String {
        let body = WireBody {
            model: &self.model_name,
            prompt: &self.prompt,
            temperature: self.temperature,
            max_tokens: self.max_completion_tokens,
            stop: (!self.stop_sequences.is_empty()).then_some(self.stop_sequences.as_slice()),
        };
        serde_json::to_string(&body).expect("request body serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub finish_reason: String,
}

/// What the caller knows about a request beyond the prompt text.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RequestContext {
    pub question_id: Option<u32>,
    /// Condition key such as `none`, `500` or `1900/comma`.
    pub condition: Option<String>,
}

pub trait CompletionBackend: Send + Sync + std::fmt::Debug {
    fn complete(&self, req: &CompletionRequest, ctx: &RequestContext) -> Result<Completion, GenerationError>;
}

/// Validates the request, calls the backend and strips trailing whitespace.
pub fn complete(
    backend: &dyn CompletionBackend,
    req: &CompletionRequest,
    ctx: &RequestContext,
) -> Result<Completion, GenerationError> {
    req.validate()?;
    let mut completion = backend.complete(req, ctx)?;
    let kept = completion.text.trim_end().len();
    completion.text.truncate(kept);
    Ok(completion)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CompletionBackendKind {
    Remote,
    #[default]
    Scripted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompletionBackendConfig {
    pub kind: CompletionBackendKind,
    pub model_name: String,
    pub endpoint_url: String,
    pub api_key_env: String,
    pub script_path: Option<PathBuf>,
    pub temperature: f64,
    pub max_completion_tokens: usize,
    pub stop_sequences: Vec<String>,
    pub retry: RetryPolicy,
    pub max_in_flight: usize,
    pub timeout_secs: u64,
    pub fixture_dir: Option<PathBuf>,
    pub fixture_mode: FixtureMode,
}

impl Default for CompletionBackendConfig {
    fn default() -> Self {
        let request = CompletionRequest::new("");
        Self {
            kind: CompletionBackendKind::Scripted,
            model_name: request.model_name,
            endpoint_url: "https://api.openai.com/v1/completions".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            script_path: None,
            temperature: request.temperature,
            max_completion_tokens: request.max_completion_tokens,
            stop_sequences: request.stop_sequences,
            retry: RetryPolicy::default(),
            max_in_flight: 2,
            timeout_secs: 60,
            fixture_dir: None,
            fixture_mode: FixtureMode::Off,
        }
    }
}

impl CompletionBackendConfig {
    pub fn scripted(path: impl Into<PathBuf>) -> Self {
        Self {
            kind: CompletionBackendKind::Scripted,
            script_path: Some(path.into()),
            ..Self::default()
        }
    }

    pub fn remote(endpoint_url: impl Into<String>, api_key_env: impl Into<String>) -> Self {
        Self {
            kind: CompletionBackendKind::Remote,
            endpoint_url: endpoint_url.into(),
            api_key_env: api_key_env.into(),
            ..Self::default()
        }
    }

    /// Request for `prompt` carrying this configuration's model parameters.
    pub fn request(&self, prompt: impl Into<String>) -> CompletionRequest {
        CompletionRequest {
            prompt: prompt.into(),
            model_name: self.model_name.clone(),
            temperature: self.temperature,
            max_completion_tokens: self.max_completion_tokens,
            stop_sequences: self.stop_sequences.clone(),
        }
    }

    pub fn build(&self) -> Result<Box<dyn CompletionBackend>, GenerationError> {
        match self.kind {
            CompletionBackendKind::Remote => {
                if self.endpoint_url.trim().is_empty() || self.api_key_env.trim().is_empty() {
                    return Err(GenerationError::Config(
                        "remote backend requires endpoint_url and api_key_env".into(),
                    ));
                }
                Ok(Box::new(RemoteCompletionBackend::new(self)?))
            }
            CompletionBackendKind::Scripted => {
                let path = self
                    .script_path
                    .as_ref()
                    .ok_or_else(|| GenerationError::Config("scripted backend requires script_path".into()))?;
                Ok(Box::new(ScriptedBackend::from_file(path)?))
            }
        }
    }
}
