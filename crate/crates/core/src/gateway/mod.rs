//! Completion backends: a live chat-completions client and a
//! content-addressed record/replay store.

mod http;
mod replay;

use std::path::PathBuf;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::prompt::PromptRequest;

pub use http::HttpBackend;
pub use replay::{ReplayBackend, ReplayStore};

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("request timed out after {0:?}")]
    Timeout(Duration),
    #[error("rate limited after {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("authentication rejected (HTTP {0})")]
    AuthFailure(u16),
    #[error("no recorded response for {hash} in {store}")]
    ReplayMiss { hash: String, store: PathBuf },
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("malformed provider response: {0}")]
    Protocol(String),
    #[error("transport: {0}")]
    Transport(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("backend configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Http,
    Replay,
}

impl std::str::FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "http" => Ok(BackendKind::Http),
            "replay" => Ok(BackendKind::Replay),
            other => Err(format!("unknown backend `{other}` (expected `http` or `replay`)")),
        }
    }
}

fn default_token_env() -> String {
    "SDOH_API_KEY".into()
}
fn default_timeout_secs() -> f64 {
    120.0
}
fn default_max_retries() -> u32 {
    4
}
fn default_concurrency() -> usize {
    4
}
fn default_backoff_ms() -> u64 {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    /// Full chat-completions URL, e.g. `https://api.openai.com/v1/chat/completions`.
    #[serde(default)]
    pub endpoint: Option<String>,
    /// Opaque model identifier; part of every request hash.
    pub model: String,
    #[serde(default = "default_token_env")]
    pub token_env: String,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: f64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_concurrency")]
    pub max_concurrency: usize,
    /// Initial retry delay; doubles on every retry.
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
    /// Sent only when set; otherwise the provider default applies.
    #[serde(default)]
    pub temperature: Option<f64>,
    /// Replay source, and the recording target for live runs.
    #[serde(default)]
    pub store: Option<PathBuf>,
    /// Live requests send note text to a third party and are refused
    /// unless this is set.
    #[serde(default)]
    pub allow_external_transmission: bool,
}

impl BackendConfig {
    pub fn replay(model: impl Into<String>, store: impl Into<PathBuf>) -> Self {
        BackendConfig {
            kind: BackendKind::Replay,
            endpoint: None,
            model: model.into(),
            token_env: default_token_env(),
            timeout_secs: default_timeout_secs(),
            max_retries: default_max_retries(),
            max_concurrency: default_concurrency(),
            backoff_ms: default_backoff_ms(),
            temperature: None,
            store: Some(store.into()),
            allow_external_transmission: false,
        }
    }

    pub fn http(model: impl Into<String>, endpoint: impl Into<String>) -> Self {
        BackendConfig {
            kind: BackendKind::Http,
            endpoint: Some(endpoint.into()),
            store: None,
            ..BackendConfig::replay(model, PathBuf::new())
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.model.trim().is_empty() {
            return Err(GatewayError::Config("model must be set".into()));
        }
        match self.kind {
            BackendKind::Replay if self.store.is_none() => {
                Err(GatewayError::Config("replay backend requires a store path".into()))
            }
            BackendKind::Http if self.endpoint.as_deref().is_none_or(|e| e.trim().is_empty()) => {
                Err(GatewayError::Config("http backend requires an endpoint".into()))
            }
            BackendKind::Http if !self.allow_external_transmission => Err(GatewayError::Config(
                "live requests transmit note text externally; set allow_external_transmission to proceed".into(),
            )),
            _ if self.max_concurrency == 0 => Err(GatewayError::Config("max_concurrency must be at least 1".into())),
            _ if self.timeout_secs.is_nan() || self.timeout_secs <= 0.0 => Err(GatewayError::Config("timeout_secs must be positive".into())),
            _ => Ok(()),
        }
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs)
    }
}

/// One recorded prompt/response pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exchange {
    pub hash: String,
    pub model: String,
    pub note_id: String,
    pub sdoh: Option<String>,
    pub sample_index: usize,
    #[serde(skip)]
    pub response: String,
    pub latency_ms: u64,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

/// Content address of one completion: model, rendered prompt, sample index
/// and the attachment bytes.
pub fn request_hash(model: &str, request: &PromptRequest, sample_index: usize) -> String {
    let mut h = Sha256::new();
    h.update(model.as_bytes());
    h.update([0]);
    h.update(request.rendered_text.as_bytes());
    h.update([0]);
    h.update(sample_index.to_le_bytes());
    h.update([0]);
    if let Some(att) = &request.attachment {
        h.update(att.filename.as_bytes());
        h.update([0]);
        h.update(Sha256::digest(&att.bytes));
    }
    hex::encode(h.finalize())
}

pub trait CompletionBackend: Send + Sync {
    /// Returns the raw model text for sample `sample_index` of `request`.
    fn complete(&self, request: &PromptRequest, sample_index: usize) -> Result<String, GatewayError>;

    fn model(&self) -> &str;
}

/// Builds the backend named by `config`.
pub fn connect(config: &BackendConfig) -> Result<Box<dyn CompletionBackend>, GatewayError> {
    config.validate()?;
    Ok(match config.kind {
        BackendKind::Replay => {
            let store = ReplayStore::open_existing(config.store.as_ref().expect("validated"))?;
            Box::new(ReplayBackend::new(store, config.model.clone()))
        }
        BackendKind::Http => Box::new(HttpBackend::new(config.clone())?),
    })
}
