//! Access to chat-completion and embedding services.
//!
//! Every backend implements [`ChatBackend`]; calls made through a [`Session`]
//! are appended to a shared [`Transcript`], which serializes to JSON Lines and
//! can be fed back through a [`ReplayBackend`].

mod http;
mod mock;
mod replay;

use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::parse::RawResponse;

pub use http::{BackendConfig, HttpBackend, HttpEmbedder, API_KEY_ENV, CREDENTIALS_ENV};
pub use mock::{HashEmbedder, Rule, RuleBackend, Scripted, ScriptedBackend, MOCK_BUCKETS};
pub use replay::ReplayBackend;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GatewayError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("server returned HTTP {code}: {body}")]
    HttpStatus { code: u16, body: String },
    #[error("request timed out")]
    Timeout,
    #[error("rate limited")]
    RateLimited,
    #[error("malformed server reply: {0}")]
    MalformedServerReply(String),
    #[error("transcript exhausted after {served} exchanges")]
    TranscriptExhausted { served: usize },
    #[error("empty request: {0}")]
    EmptyRequest(&'static str),
    #[error("no scripted reply for request: {0}")]
    NoScriptedReply(String),
    #[error("recorded failure: {0}")]
    Replayed(String),
    #[error("configuration error: {0}")]
    Config(String),
}

impl GatewayError {
    /// Failures worth retrying with backoff.
    pub fn is_transient(&self) -> bool {
        match self {
            GatewayError::Transport(_) | GatewayError::Timeout | GatewayError::RateLimited => true,
            GatewayError::HttpStatus { code, .. } => *code >= 500,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: String,
    pub content: String,
}

impl Message {
    pub fn user(content: impl Into<String>) -> Self {
        Message { role: "user".into(), content: content.into() }
    }

    pub fn system(content: impl Into<String>) -> Self {
        Message { role: "system".into(), content: content.into() }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
    pub total_tokens: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatReply {
    pub response: RawResponse,
    pub usage: Option<Usage>,
}

/// One request/response pair as it went over the wire.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatExchange {
    pub request_messages: Vec<Message>,
    pub response: RawResponse,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<Usage>,
    /// Set when the call failed; `response.text` is empty then.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repetition: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    pub model_id: String,
}

impl EmbeddingVector {
    /// Cosine similarity; 0 when either vector has zero norm.
    pub fn cosine(&self, other: &EmbeddingVector) -> f64 {
        cosine(&self.values, &other.values)
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum();
    let nb: f64 = b.iter().map(|x| x * x).sum();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb).sqrt()).clamp(-1.0, 1.0)
}

/// A chat-completion service. Each call is self-contained; implementations
/// must not keep conversational state between calls.
pub trait ChatBackend: Send + Sync {
    fn complete(&self, messages: &[Message]) -> Result<ChatReply, GatewayError>;
    fn model_id(&self) -> &str;
}

pub trait Embedder: Send + Sync {
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, GatewayError>;
    fn model_id(&self) -> &str;
}

/// Checked chat call without recording.
pub fn chat(backend: &dyn ChatBackend, messages: &[Message]) -> Result<RawResponse, GatewayError> {
    if messages.is_empty() {
        return Err(GatewayError::EmptyRequest("no messages"));
    }
    backend.complete(messages).map(|r| r.response)
}

/// Checked embedding call: nonempty input, one vector per text, uniform dimension.
pub fn embed(embedder: &dyn Embedder, texts: &[String]) -> Result<Vec<EmbeddingVector>, GatewayError> {
    if texts.is_empty() {
        return Err(GatewayError::EmptyRequest("no texts to embed"));
    }
    if texts.iter().any(|t| t.is_empty()) {
        return Err(GatewayError::EmptyRequest("empty text in embedding batch"));
    }
    let out = embedder.embed_batch(texts)?;
    if out.len() != texts.len() {
        return Err(GatewayError::MalformedServerReply(format!(
            "{} embeddings for {} inputs",
            out.len(),
            texts.len()
        )));
    }
    if let Some(first) = out.first() {
        if out.iter().any(|v| v.values.len() != first.values.len()) {
            return Err(GatewayError::MalformedServerReply("embedding dimensions differ".into()));
        }
    }
    Ok(out)
}

/// Append-only log of exchanges, shared across threads.
#[derive(Debug, Clone, Default)]
pub struct Transcript {
    inner: Arc<Mutex<Vec<ChatExchange>>>,
}

impl Transcript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_exchanges(exchanges: Vec<ChatExchange>) -> Self {
        Transcript { inner: Arc::new(Mutex::new(exchanges)) }
    }

    pub fn record(&self, exchange: ChatExchange) {
        self.inner.lock().expect("transcript lock").push(exchange);
    }

    pub fn extend(&self, exchanges: impl IntoIterator<Item = ChatExchange>) {
        self.inner.lock().expect("transcript lock").extend(exchanges);
    }

    pub fn exchanges(&self) -> Vec<ChatExchange> {
        self.inner.lock().expect("transcript lock").clone()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("transcript lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_jsonl(&self) -> String {
        exchanges_to_jsonl(&self.exchanges())
    }

    pub fn write_jsonl(&self, path: &Path) -> std::io::Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(self.to_jsonl().as_bytes())?;
        f.flush()
    }
}

pub fn exchanges_to_jsonl(exchanges: &[ChatExchange]) -> String {
    let mut out = String::new();
    for e in exchanges {
        out.push_str(&serde_json::to_string(e).expect("exchange serializes"));
        out.push('\n');
    }
    out
}

pub fn exchanges_from_jsonl(payload: &str) -> Result<Vec<ChatExchange>, GatewayError> {
    payload
        .lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| GatewayError::Config(format!("transcript line {}: {e}", i + 1)))
        })
        .collect()
}

pub fn read_jsonl(path: &Path) -> Result<Vec<ChatExchange>, GatewayError> {
    let f = std::fs::File::open(path)
        .map_err(|e| GatewayError::Config(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| GatewayError::Config(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| GatewayError::Config(format!("transcript line {}: {e}", i + 1)))?,
        );
    }
    Ok(out)
}

/// A backend bound to a transcript; every call, failed or not, is recorded.
pub struct Session<'a> {
    backend: &'a dyn ChatBackend,
    log: Vec<ChatExchange>,
    repetition: Option<usize>,
}

impl<'a> Session<'a> {
    pub fn new(backend: &'a dyn ChatBackend, repetition: Option<usize>) -> Self {
        Session { backend, log: Vec::new(), repetition }
    }

    pub fn chat(&mut self, messages: Vec<Message>) -> Result<RawResponse, GatewayError> {
        if messages.is_empty() {
            return Err(GatewayError::EmptyRequest("no messages"));
        }
        let result = self.backend.complete(&messages);
        let (response, usage, error) = match &result {
            Ok(r) => (r.response.clone(), r.usage, None),
            Err(e) => (
                RawResponse {
                    text: String::new(),
                    model_id: self.backend.model_id().to_string(),
                    timestamp: now(),
                },
                None,
                Some(e.to_string()),
            ),
        };
        self.log.push(ChatExchange {
            request_messages: messages,
            response,
            usage,
            error,
            repetition: self.repetition,
        });
        result.map(|r| r.response)
    }

    /// Single user-message request.
    pub fn ask(&mut self, prompt: &str) -> Result<RawResponse, GatewayError> {
        self.chat(vec![Message::user(prompt)])
    }

    pub fn exchanges(&self) -> &[ChatExchange] {
        &self.log
    }

    pub fn backend(&self) -> &'a dyn ChatBackend {
        self.backend
    }

    pub fn repetition(&self) -> Option<usize> {
        self.repetition
    }

    /// Appends exchanges recorded by a child session.
    pub fn absorb(&mut self, exchanges: Vec<ChatExchange>) {
        self.log.extend(exchanges);
    }

    /// Runs `f` over `items` with at most `parallelism` threads, each item on a
    /// fresh child session. Results and exchanges come back in item order.
    pub fn fan_out<T, R, F>(&mut self, items: &[T], parallelism: usize, f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T, &mut Session<'a>) -> R + Sync,
    {
        let backend = self.backend;
        let repetition = self.repetition;
        let workers = parallelism.max(1).min(items.len().max(1));
        let mut slots: Vec<Option<(R, Vec<ChatExchange>)>> = (0..items.len()).map(|_| None).collect();
        if workers == 1 {
            for (i, item) in items.iter().enumerate() {
                let mut child = Session::new(backend, repetition);
                let r = f(item, &mut child);
                slots[i] = Some((r, child.log));
            }
        } else {
            let next = std::sync::atomic::AtomicUsize::new(0);
            let done = Mutex::new(&mut slots);
            std::thread::scope(|scope| {
                for _ in 0..workers {
                    scope.spawn(|| loop {
                        let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                        if i >= items.len() {
                            break;
                        }
                        let mut child = Session::new(backend, repetition);
                        let r = f(&items[i], &mut child);
                        done.lock().expect("fan-out lock")[i] = Some((r, child.log));
                    });
                }
            });
        }
        slots
            .into_iter()
            .map(|s| {
                let (r, log) = s.expect("every item ran");
                self.log.extend(log);
                r
            })
            .collect()
    }

    /// Hands the session's exchanges, in call order, to a shared transcript.
    pub fn flush_into(self, transcript: &Transcript) {
        transcript.extend(self.log);
    }

    pub fn into_exchanges(self) -> Vec<ChatExchange> {
        self.log
    }
}

pub(crate) fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}
