use std::collections::VecDeque;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{now, ChatBackend, ChatReply, Embedder, EmbeddingVector, GatewayError, Message};
use crate::parse::RawResponse;

/// Bucket count of the token-bag mock embedder.
pub const MOCK_BUCKETS: usize = 256;

fn reply(model_id: &str, text: &str) -> ChatReply {
    ChatReply {
        response: RawResponse { text: text.to_string(), model_id: model_id.to_string(), timestamp: now() },
        usage: None,
    }
}

/// Reply `reply` to any request whose last message contains `contains`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rule {
    pub contains: String,
    pub reply: String,
}

/// Stateless mock: the answer is a pure function of the request, so repeated or
/// interleaved calls always agree. First matching rule wins.
#[derive(Debug, Clone)]
pub struct RuleBackend {
    model_id: String,
    rules: Vec<Rule>,
    fallback: Option<String>,
}

impl RuleBackend {
    pub fn new(model_id: impl Into<String>) -> Self {
        RuleBackend { model_id: model_id.into(), rules: Vec::new(), fallback: None }
    }

    pub fn from_rules(model_id: impl Into<String>, rules: Vec<Rule>, fallback: Option<String>) -> Self {
        RuleBackend { model_id: model_id.into(), rules, fallback }
    }

    pub fn rule(mut self, contains: impl Into<String>, reply: impl Into<String>) -> Self {
        self.rules.push(Rule { contains: contains.into(), reply: reply.into() });
        self
    }

    pub fn with_fallback(mut self, reply: impl Into<String>) -> Self {
        self.fallback = Some(reply.into());
        self
    }
}

impl ChatBackend for RuleBackend {
    fn complete(&self, messages: &[Message]) -> Result<ChatReply, GatewayError> {
        let last = messages.last().map(|m| m.content.as_str()).unwrap_or_default();
        self.rules
            .iter()
            .find(|r| last.contains(&r.contains))
            .map(|r| r.reply.as_str())
            .or(self.fallback.as_deref())
            .map(|t| reply(&self.model_id, t))
            .ok_or_else(|| GatewayError::NoScriptedReply(last.chars().take(80).collect()))
    }

    fn model_id(&self) -> &str {
        &self.model_id
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Scripted {
    Reply(String),
    Fail(GatewayError),
}

/// Sequential mock: answers calls in order from a fixed script.
#[derive(Debug)]
pub struct ScriptedBackend {
    model_id: String,
    script: Mutex<VecDeque<Scripted>>,
}

impl ScriptedBackend {
    pub fn new(model_id: impl Into<String>, script: Vec<Scripted>) -> Self {
        ScriptedBackend { model_id: model_id.into(), script: Mutex::new(script.into()) }
    }

    pub fn replies<I, S>(model_id: impl Into<String>, replies: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::new(model_id, replies.into_iter().map(|r| Scripted::Reply(r.into())).collect())
    }

    pub fn remaining(&self) -> usize {
        self.script.lock().expect("script lock").len()
    }
}

impl ChatBackend for ScriptedBackend {
    fn complete(&self, messages: &[Message]) -> Result<ChatReply, GatewayError> {
        let next = self.script.lock().expect("script lock").pop_front();
        match next {
            Some(Scripted::Reply(t)) => Ok(reply(&self.model_id, &t)),
            Some(Scripted::Fail(e)) => Err(e),
            None => Err(GatewayError::NoScriptedReply(
                messages.last().map(|m| m.content.chars().take(80).collect()).unwrap_or_default(),
            )),
        }
    }

    fn model_id(&self) -> &str {
        &self.model_id
    }
}

/// Deterministic offline embedder: lowercase, split on non-alphanumerics, hash
/// each token (FNV-1a) into one of [`MOCK_BUCKETS`] counters.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    model_id: String,
}

impl Default for HashEmbedder {
    fn default() -> Self {
        HashEmbedder { model_id: "mock-token-bag".into() }
    }
}

impl HashEmbedder {
    pub fn bucket(token: &str) -> usize {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in token.as_bytes() {
            h ^= u64::from(*b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        (h % MOCK_BUCKETS as u64) as usize
    }

    pub fn tokens(text: &str) -> Vec<String> {
        text.to_lowercase()
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .map(str::to_string)
            .collect()
    }

    pub fn vector(&self, text: &str) -> EmbeddingVector {
        let mut values = vec![0.0; MOCK_BUCKETS];
        for t in Self::tokens(text) {
            values[Self::bucket(&t)] += 1.0;
        }
        EmbeddingVector { values, model_id: self.model_id.clone() }
    }
}

impl Embedder for HashEmbedder {
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, GatewayError> {
        Ok(texts.iter().map(|t| self.vector(t)).collect())
    }

    fn model_id(&self) -> &str {
        &self.model_id
    }
}
