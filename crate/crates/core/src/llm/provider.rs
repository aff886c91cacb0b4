//! Chat-completion providers.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Pipeline stage a request belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Descriptions,
    Boxes,
    Colors,
    Keypoints,
    ChatEdit,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Descriptions => "descriptions",
            Stage::Boxes => "boxes",
            Stage::Colors => "colors",
            Stage::Keypoints => "keypoints",
            Stage::ChatEdit => "chat_edit",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: Role::Assistant, content: content.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChatParams {
    pub temperature: f32,
    pub max_tokens: u32,
    pub timeout: Duration,
}

impl Default for ChatParams {
    fn default() -> Self {
        Self { temperature: 0.0, max_tokens: 1024, timeout: Duration::from_secs(60) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub stage: Stage,
    pub system: String,
    pub messages: Vec<ChatMessage>,
    pub params: ChatParams,
}

impl ChatRequest {
    /// Hex SHA-256 over the system prompt and messages (stage and sampling
    /// parameters excluded). Mock transcripts key replies by this value.
    pub fn fingerprint(&self) -> String {
        #[derive(Serialize)]
        struct Canon<'a> {
            system: &'a str,
            messages: &'a [ChatMessage],
        }
        let canon = serde_json::to_vec(&Canon { system: &self.system, messages: &self.messages })
            .expect("request serialization is infallible");
        let digest = Sha256::digest(&canon);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ProviderError {
    #[error("request timed out")]
    Timeout,
    #[error("transport error: {0}")]
    Transport(String),
    #[error("provider returned status {code}: {body}")]
    Status { code: u16, body: String },
    #[error("unexpected response: {0}")]
    Protocol(String),
    #[error("no scripted reply for {stage} request {fingerprint}")]
    NoReply { stage: Stage, fingerprint: String },
}

impl ProviderError {
    /// Worth retrying at the transport level.
    pub fn is_transient(&self) -> bool {
        match self {
            ProviderError::Timeout | ProviderError::Transport(_) => true,
            ProviderError::Status { code, .. } => *code == 429 || *code >= 500,
            _ => false,
        }
    }
}

pub trait ChatProvider: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError>;
}

impl<P: ChatProvider + ?Sized> ChatProvider for &P {
    fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        (**self).complete(request)
    }
}

impl<P: ChatProvider + ?Sized> ChatProvider for Box<P> {
    fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        (**self).complete(request)
    }
}

impl<P: ChatProvider + ?Sized> ChatProvider for std::sync::Arc<P> {
    fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        (**self).complete(request)
    }
}

/// Exponential backoff for transient provider failures.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub initial_delay: Duration,
    pub max_delay: Duration,
    pub factor: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            initial_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(8),
            factor: 2.0,
        }
    }
}

impl RetryPolicy {
    pub fn delay(&self, attempt: u32) -> Duration {
        let d = self.initial_delay.as_secs_f64() * self.factor.powi(attempt as i32);
        Duration::from_secs_f64(d.min(self.max_delay.as_secs_f64()))
    }
}

/// Wraps a provider with bounded retries on transient errors.
pub struct Retrying<P> {
    inner: P,
    policy: RetryPolicy,
    sleep: fn(Duration),
}

impl<P: ChatProvider> Retrying<P> {
    pub fn new(inner: P, policy: RetryPolicy) -> Self {
        Self { inner, policy, sleep: std::thread::sleep }
    }

    #[cfg(test)]
    fn without_sleep(inner: P, policy: RetryPolicy) -> Self {
        Self { inner, policy, sleep: |_| {} }
    }
}

impl<P: ChatProvider> ChatProvider for Retrying<P> {
    fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        let mut attempt = 0;
        loop {
            match self.inner.complete(request) {
                Err(e) if e.is_transient() && attempt < self.policy.max_retries => {
                    tracing::warn!(stage = %request.stage, attempt, error = %e, "retrying provider call");
                    (self.sleep)(self.policy.delay(attempt));
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}

/// A canned reply: text, or a simulated failure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MockReply {
    Text(String),
    Failure { error: MockFailure },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockFailure {
    Timeout,
    Transport,
    ServerError,
}

/// One transcript entry, matched by exact request fingerprint or, failing
/// that, by stage. Replies are consumed in order; the last one repeats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fingerprint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage: Option<Stage>,
    pub replies: Vec<MockReply>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub entries: Vec<TranscriptEntry>,
}

#[derive(Debug, Error)]
pub enum TranscriptError {
    #[error("cannot read transcript {path}: {message}")]
    Read { path: String, message: String },
    #[error("transcript parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
}

impl Transcript {
    pub fn from_json(text: &str) -> Result<Self, TranscriptError> {
        serde_json::from_str(text).map_err(|e| TranscriptError::Parse { line: e.line(), message: e.to_string() })
    }

    pub fn load(path: &Path) -> Result<Self, TranscriptError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| TranscriptError::Read { path: path.display().to_string(), message: e.to_string() })?;
        Self::from_json(&text)
    }

    /// Convenience builder: one stage entry with the given replies.
    pub fn stage(mut self, stage: Stage, replies: &[&str]) -> Self {
        self.entries.push(TranscriptEntry {
            fingerprint: None,
            stage: Some(stage),
            replies: replies.iter().map(|r| MockReply::Text(r.to_string())).collect(),
        });
        self
    }
}

/// Replays canned replies from a [`Transcript`].
pub struct MockProvider {
    transcript: Transcript,
    cursors: Mutex<HashMap<usize, usize>>,
}

impl MockProvider {
    pub fn new(transcript: Transcript) -> Self {
        Self { transcript, cursors: Mutex::new(HashMap::new()) }
    }

    pub fn load(path: &Path) -> Result<Self, TranscriptError> {
        Ok(Self::new(Transcript::load(path)?))
    }
}

impl ChatProvider for MockProvider {
    fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        let fingerprint = request.fingerprint();
        let entries = &self.transcript.entries;
        let found = entries
            .iter()
            .position(|e| e.fingerprint.as_deref() == Some(fingerprint.as_str()))
            .or_else(|| entries.iter().position(|e| e.fingerprint.is_none() && e.stage == Some(request.stage)));
        let Some(at) = found else {
            return Err(ProviderError::NoReply { stage: request.stage, fingerprint });
        };
        let entry = &entries[at];
        if entry.replies.is_empty() {
            return Err(ProviderError::NoReply { stage: request.stage, fingerprint });
        }
        let mut cursors = self.cursors.lock().expect("mock cursor lock");
        let cursor = cursors.entry(at).or_insert(0);
        let reply = &entry.replies[(*cursor).min(entry.replies.len() - 1)];
        *cursor += 1;
        match reply {
            MockReply::Text(t) => Ok(t.clone()),
            MockReply::Failure { error: MockFailure::Timeout } => Err(ProviderError::Timeout),
            MockReply::Failure { error: MockFailure::Transport } => {
                Err(ProviderError::Transport("simulated connection failure".into()))
            }
            MockReply::Failure { error: MockFailure::ServerError } => {
                Err(ProviderError::Status { code: 500, body: "simulated server error".into() })
            }
        }
    }
}
