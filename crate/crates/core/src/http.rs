//! JSON-over-HTTPS calls with retry and recorded-fixture replay.
//!
//! Only transport failures, HTTP 429 and 5xx responses are retried. Every other
//! non-success status is returned immediately with the response body.
//!
//! Recorded fixtures live in one directory, one file per request keyed by the SHA-256
//! of the exact request body: `<key>.json` holds the response body and
//! `<key>.request.json` the request that produced it.

use std::path::{Path, PathBuf};
use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Exponential backoff with optional jitter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff_ms: u64,
    pub max_backoff_ms: u64,
    pub jitter: bool,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 5,
            initial_backoff_ms: 1_000,
            max_backoff_ms: 30_000,
            jitter: true,
        }
    }
}

impl RetryPolicy {
    /// Un-jittered delay before retry number `retry` (0-based).
    pub fn backoff(&self, retry: u32) -> Duration {
        let factor = 1u64.checked_shl(retry.min(63)).unwrap_or(u64::MAX);
        let ms = self.initial_backoff_ms.saturating_mul(factor).min(self.max_backoff_ms);
        Duration::from_millis(ms)
    }

    fn delay(&self, retry: u32) -> Duration {
        let base = self.backoff(retry);
        if self.jitter {
            base.mul_f64(rand::rng().random_range(0.5..=1.0))
        } else {
            base
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FixtureMode {
    /// Always call the live endpoint.
    #[default]
    Off,
    /// Serve responses from the fixture directory; never touch the network.
    Replay,
    /// Call the live endpoint and save every exchange.
    Record,
}

#[derive(Debug)]
pub(crate) enum CallError {
    Config(String),
    Transport { attempts: u32, message: String },
    Status { status: u16, body: String },
    FixtureMiss { key: String, path: PathBuf },
    FixtureIo(String),
}

impl std::fmt::Display for CallError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CallError::Config(m) => write!(f, "{m}"),
            CallError::Transport { attempts, message } => {
                write!(f, "request failed after {attempts} attempt(s): {message}")
            }
            CallError::Status { status, body } => write!(f, "HTTP {status}: {}", error_message(body)),
            CallError::FixtureMiss { key, path } => {
                write!(f, "no recorded response for request {key} in {}", path.display())
            }
            CallError::FixtureIo(m) => write!(f, "fixture i/o: {m}"),
        }
    }
}

/// Pulls `error.message` out of an API error body, falling back to the raw body.
pub(crate) fn error_message(body: &str) -> String {
    serde_json::from_str::<serde_json::Value>(body)
        .ok()
        .and_then(|v| v.pointer("/error/message").and_then(|m| m.as_str()).map(str::to_owned))
        .unwrap_or_else(|| body.trim().to_string())
}

pub(crate) fn body_key(body: &str) -> String {
    let digest = Sha256::digest(body.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug)]
pub(crate) struct JsonEndpoint {
    url: String,
    api_key: Option<String>,
    agent: ureq::Agent,
    retry: RetryPolicy,
    fixtures: Option<(PathBuf, FixtureMode)>,
}

impl JsonEndpoint {
    pub(crate) fn new(
        url: &str,
        api_key_env: &str,
        retry: RetryPolicy,
        fixture_dir: Option<&Path>,
        mode: FixtureMode,
        timeout: Duration,
    ) -> Result<Self, CallError> {
        let fixtures = match (fixture_dir, mode) {
            (_, FixtureMode::Off) => None,
            (Some(dir), mode) => Some((dir.to_path_buf(), mode)),
            (None, _) => return Err(CallError::Config("fixture mode requires a fixture directory".into())),
        };
        let api_key = if mode == FixtureMode::Replay {
            None
        } else {
            let key = std::env::var(api_key_env).map_err(|_| {
                CallError::Config(format!(
                    "environment variable `{api_key_env}` holding the API key is not set"
                ))
            })?;
            Some(key)
        };
        if url.is_empty() && mode != FixtureMode::Replay {
            return Err(CallError::Config("remote backend requires an endpoint URL".into()));
        }
        let config = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .build();
        Ok(Self {
            url: url.to_string(),
            api_key,
            agent: config.into(),
            retry,
            fixtures,
        })
    }

    pub(crate) fn post(&self, body: &str) -> Result<String, CallError> {
        match &self.fixtures {
            Some((dir, FixtureMode::Replay)) => {
                let key = body_key(body);
                let path = dir.join(format!("{key}.json"));
                std::fs::read_to_string(&path).map_err(|e| match e.kind() {
                    std::io::ErrorKind::NotFound => CallError::FixtureMiss { key, path: dir.clone() },
                    _ => CallError::FixtureIo(format!("{}: {e}", path.display())),
                })
            }
            Some((dir, FixtureMode::Record)) => {
                let response = self.post_live(body)?;
                let key = body_key(body);
                let write = |name: String, data: &str| {
                    std::fs::create_dir_all(dir)
                        .and_then(|_| std::fs::write(dir.join(&name), data))
                        .map_err(|e| CallError::FixtureIo(format!("{name}: {e}")))
                };
                write(format!("{key}.request.json"), body)?;
                write(format!("{key}.json"), &response)?;
                Ok(response)
            }
            _ => self.post_live(body),
        }
    }

    fn post_live(&self, body: &str) -> Result<String, CallError> {
        let attempts = self.retry.max_attempts.max(1);
        let mut last = String::new();
        for attempt in 1..=attempts {
            if attempt > 1 {
                std::thread::sleep(self.retry.delay(attempt - 2));
            }
            let mut request = self.agent.post(&self.url).header("Content-Type", "application/json");
            if let Some(key) = &self.api_key {
                request = request.header("Authorization", &format!("Bearer {key}"));
            }
            match request.send(body.as_bytes()) {
                Ok(response) => {
                    let status = response.status().as_u16();
                    let text = match response.into_body().read_to_string() {
                        Ok(t) => t,
                        Err(e) => {
                            last = format!("reading response body: {e}");
                            log::warn!("attempt {attempt}/{attempts} to {}: {last}", self.url);
                            continue;
                        }
                    };
                    if (200..300).contains(&status) {
                        return Ok(text);
                    }
                    if status == 429 || status >= 500 {
                        last = format!("HTTP {status}: {}", error_message(&text));
                        log::warn!("attempt {attempt}/{attempts} to {}: {last}", self.url);
                        continue;
                    }
                    return Err(CallError::Status { status, body: text });
                }
                Err(e) if is_permanent(&e) => return Err(CallError::Config(e.to_string())),
                Err(e) => {
                    last = e.to_string();
                    log::warn!("attempt {attempt}/{attempts} to {}: {last}", self.url);
                }
            }
        }
        Err(CallError::Transport {
            attempts,
            message: last,
        })
    }
}

fn is_permanent(err: &ureq::Error) -> bool {
    matches!(
        err,
        ureq::Error::BadUri(_) | ureq::Error::InvalidProxyUrl | ureq::Error::RequireHttpsOnly(_)
    )
}
