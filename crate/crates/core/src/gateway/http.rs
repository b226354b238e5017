//! OpenAI-compatible HTTP client (`/chat/completions`, `/embeddings`).

use std::time::Duration;

use reqwest::blocking::Client;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{now, ChatBackend, ChatReply, Embedder, EmbeddingVector, GatewayError, Message, Usage};
use crate::parse::RawResponse;

/// Environment variable holding the API key.
pub const API_KEY_ENV: &str = "DSM_FORGE_API_KEY";
/// Environment variable pointing at a file whose first line is the API key.
pub const CREDENTIALS_ENV: &str = "DSM_FORGE_CREDENTIALS";

/// Context windows at or below this size produce a warning.
const SMALL_CONTEXT_WINDOW: usize = 2048;

fn default_max_tokens() -> u32 {
    4096
}
fn default_context_window() -> usize {
    32_768
}
fn default_timeout_secs() -> f64 {
    120.0
}
fn default_max_retries() -> u32 {
    3
}
fn default_retry_base_ms() -> u64 {
    500
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub base_url: String,
    pub model_id: String,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default = "default_context_window")]
    pub context_window: usize,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: f64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_retry_base_ms")]
    pub retry_base_ms: u64,
    /// Name of the environment variable to read the key from; defaults to [`API_KEY_ENV`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
    /// Never read from or written to config files.
    #[serde(skip)]
    pub api_key: Option<String>,
}

impl BackendConfig {
    pub fn new(base_url: impl Into<String>, model_id: impl Into<String>) -> Self {
        BackendConfig {
            base_url: base_url.into(),
            model_id: model_id.into(),
            temperature: 0.0,
            max_tokens: default_max_tokens(),
            context_window: default_context_window(),
            timeout_secs: default_timeout_secs(),
            max_retries: default_max_retries(),
            retry_base_ms: default_retry_base_ms(),
            api_key_env: None,
            api_key: None,
        }
    }

    /// Fills `api_key` from the environment or the credentials file if unset.
    pub fn resolve_api_key(&mut self) {
        if self.api_key.is_some() {
            return;
        }
        let var = self.api_key_env.as_deref().unwrap_or(API_KEY_ENV);
        if let Ok(k) = std::env::var(var) {
            if !k.trim().is_empty() {
                self.api_key = Some(k.trim().to_string());
                return;
            }
        }
        if let Ok(path) = std::env::var(CREDENTIALS_ENV) {
            if let Ok(body) = std::fs::read_to_string(path) {
                self.api_key = body.lines().next().map(|l| l.trim().to_string()).filter(|l| !l.is_empty());
            }
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.base_url.trim().is_empty() {
            return Err(GatewayError::Config("base_url is empty".into()));
        }
        if !(self.base_url.starts_with("http://") || self.base_url.starts_with("https://")) {
            return Err(GatewayError::Config(format!("base_url {:?} is not an http(s) URL", self.base_url)));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(GatewayError::Config("temperature must be >= 0".into()));
        }
        if self.max_tokens == 0 || self.context_window == 0 {
            return Err(GatewayError::Config("max_tokens and context_window must be positive".into()));
        }
        if self.timeout_secs.is_nan() || self.timeout_secs <= 0.0 {
            return Err(GatewayError::Config("timeout must be positive".into()));
        }
        Ok(())
    }

    /// Non-fatal configuration problems worth surfacing.
    pub fn warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        if self.context_window <= SMALL_CONTEXT_WINDOW {
            w.push(format!(
                "context_window {} is at or below {}; long prompts will be truncated by the server",
                self.context_window, SMALL_CONTEXT_WINDOW
            ));
        }
        w
    }

    /// Rough prompt size in tokens (four characters per token).
    pub fn estimate_tokens(messages: &[Message]) -> usize {
        messages.iter().map(|m| m.content.chars().count()).sum::<usize>().div_ceil(4)
    }

    pub fn exceeds_context(&self, messages: &[Message]) -> bool {
        Self::estimate_tokens(messages) > self.context_window
    }
}

fn endpoint(base: &str, path: &str) -> String {
    format!("{}/{}", base.trim_end_matches('/'), path)
}

fn build_client(cfg: &BackendConfig) -> Result<Client, GatewayError> {
    Client::builder()
        .timeout(Duration::from_secs_f64(cfg.timeout_secs))
        .build()
        .map_err(|e| GatewayError::Transport(e.to_string()))
}

fn post_json(
    client: &Client,
    cfg: &BackendConfig,
    url: &str,
    body: &serde_json::Value,
) -> Result<serde_json::Value, GatewayError> {
    let mut attempt = 0u32;
    loop {
        let result = send_once(client, cfg, url, body);
        match result {
            Err(e) if e.is_transient() && attempt < cfg.max_retries => {
                let delay = cfg.retry_base_ms.saturating_mul(1u64 << attempt.min(16));
                tracing::warn!(attempt, error = %e, delay_ms = delay, "retrying request");
                std::thread::sleep(Duration::from_millis(delay));
                attempt += 1;
            }
            other => return other,
        }
    }
}

fn send_once(
    client: &Client,
    cfg: &BackendConfig,
    url: &str,
    body: &serde_json::Value,
) -> Result<serde_json::Value, GatewayError> {
    let mut req = client.post(url).json(body);
    if let Some(key) = &cfg.api_key {
        req = req.bearer_auth(key);
    }
    let resp = req.send().map_err(map_reqwest)?;
    let status = resp.status();
    let text = resp.text().map_err(map_reqwest)?;
    if status.as_u16() == 429 {
        return Err(GatewayError::RateLimited);
    }
    if !status.is_success() {
        return Err(GatewayError::HttpStatus { code: status.as_u16(), body: text.chars().take(500).collect() });
    }
    serde_json::from_str(&text).map_err(|e| GatewayError::MalformedServerReply(e.to_string()))
}

fn map_reqwest(e: reqwest::Error) -> GatewayError {
    if e.is_timeout() {
        GatewayError::Timeout
    } else if e.is_builder() {
        GatewayError::Config(e.to_string())
    } else {
        GatewayError::Transport(e.to_string())
    }
}

#[derive(Deserialize)]
struct CompletionBody {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<Usage>,
    #[serde(default)]
    model: Option<String>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

/// Chat backend speaking the OpenAI-compatible wire format.
#[derive(Debug, Clone)]
pub struct HttpBackend {
    cfg: BackendConfig,
    client: Client,
}

impl HttpBackend {
    pub fn new(mut cfg: BackendConfig) -> Result<Self, GatewayError> {
        cfg.validate()?;
        cfg.resolve_api_key();
        for w in cfg.warnings() {
            tracing::warn!("{w}");
        }
        let client = build_client(&cfg)?;
        Ok(HttpBackend { cfg, client })
    }

    pub fn config(&self) -> &BackendConfig {
        &self.cfg
    }
}

impl ChatBackend for HttpBackend {
    fn complete(&self, messages: &[Message]) -> Result<ChatReply, GatewayError> {
        if self.cfg.exceeds_context(messages) {
            tracing::warn!(
                estimate = BackendConfig::estimate_tokens(messages),
                context_window = self.cfg.context_window,
                "prompt likely exceeds the model context window"
            );
        }
        let body = json!({
            "model": self.cfg.model_id,
            "messages": messages,
            "temperature": self.cfg.temperature,
            "max_tokens": self.cfg.max_tokens,
        });
        let value = post_json(&self.client, &self.cfg, &endpoint(&self.cfg.base_url, "chat/completions"), &body)?;
        let parsed: CompletionBody =
            serde_json::from_value(value).map_err(|e| GatewayError::MalformedServerReply(e.to_string()))?;
        let text = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| GatewayError::MalformedServerReply("no choices in reply".into()))?;
        Ok(ChatReply {
            response: RawResponse {
                text,
                model_id: parsed.model.unwrap_or_else(|| self.cfg.model_id.clone()),
                timestamp: now(),
            },
            usage: parsed.usage,
        })
    }

    fn model_id(&self) -> &str {
        &self.cfg.model_id
    }
}

#[derive(Deserialize)]
struct EmbeddingBody {
    data: Vec<EmbeddingItem>,
}

#[derive(Deserialize)]
struct EmbeddingItem {
    #[serde(default)]
    index: usize,
    embedding: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct HttpEmbedder {
    cfg: BackendConfig,
    client: Client,
}

impl HttpEmbedder {
    pub fn new(mut cfg: BackendConfig) -> Result<Self, GatewayError> {
        cfg.validate()?;
        cfg.resolve_api_key();
        let client = build_client(&cfg)?;
        Ok(HttpEmbedder { cfg, client })
    }
}

impl Embedder for HttpEmbedder {
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, GatewayError> {
        let body = json!({ "model": self.cfg.model_id, "input": texts });
        let value = post_json(&self.client, &self.cfg, &endpoint(&self.cfg.base_url, "embeddings"), &body)?;
        let mut parsed: EmbeddingBody =
            serde_json::from_value(value).map_err(|e| GatewayError::MalformedServerReply(e.to_string()))?;
        parsed.data.sort_by_key(|d| d.index);
        Ok(parsed
            .data
            .into_iter()
            .map(|d| EmbeddingVector { values: d.embedding, model_id: self.cfg.model_id.clone() })
            .collect())
    }

    fn model_id(&self) -> &str {
        &self.cfg.model_id
    }
}
