//! OpenAI-compatible `/chat/completions` client.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::provider::{ChatProvider, ChatRequest, ProviderError, Role};

pub const ENV_BASE_URL: &str = "PANEL_LLM_BASE_URL";
pub const ENV_API_KEY: &str = "PANEL_LLM_API_KEY";
pub const ENV_MODEL: &str = "PANEL_LLM_MODEL";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpProviderConfig {
    pub base_url: String,
    pub api_key: Option<String>,
    pub model: String,
}

impl HttpProviderConfig {
    /// Read endpoint, credential and model from the environment. The base
    /// URL is required; the model defaults to `gpt-4o-mini`.
    pub fn from_env() -> Option<Self> {
        let base_url = std::env::var(ENV_BASE_URL).ok().filter(|s| !s.is_empty())?;
        Some(Self {
            base_url,
            api_key: std::env::var(ENV_API_KEY).ok().filter(|s| !s.is_empty()),
            model: std::env::var(ENV_MODEL).unwrap_or_else(|_| "gpt-4o-mini".to_string()),
        })
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.base_url.trim_end_matches('/'))
    }
}

#[derive(Serialize)]
struct WireMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: Vec<WireMessage<'a>>,
    temperature: f32,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireReply,
}

#[derive(Deserialize)]
struct WireReply {
    content: Option<String>,
}

/// Blocking chat-completion client. Each call carries the request's
/// timeout as its deadline; wrap in [`super::Retrying`] for backoff.
///
/// Must not be called from inside an async executor thread.
#[derive(Debug, Clone)]
pub struct HttpChatProvider {
    config: HttpProviderConfig,
}

impl HttpChatProvider {
    pub fn new(config: HttpProviderConfig) -> Self {
        Self { config }
    }

    pub fn config(&self) -> &HttpProviderConfig {
        &self.config
    }
}

fn classify(e: reqwest::Error) -> ProviderError {
    if e.is_timeout() {
        ProviderError::Timeout
    } else if e.is_connect() || e.is_request() {
        ProviderError::Transport(e.to_string())
    } else {
        ProviderError::Protocol(e.to_string())
    }
}

impl ChatProvider for HttpChatProvider {
    fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        let mut messages = vec![WireMessage { role: "system", content: &request.system }];
        messages.extend(request.messages.iter().map(|m| WireMessage {
            role: match m.role {
                Role::User => "user",
                Role::Assistant => "assistant",
            },
            content: &m.content,
        }));
        let body = WireRequest {
            model: &self.config.model,
            messages,
            temperature: request.params.temperature,
            max_tokens: request.params.max_tokens,
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(request.params.timeout)
            .connect_timeout(request.params.timeout.min(Duration::from_secs(10)))
            .build()
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        let mut req = client.post(self.config.endpoint()).json(&body);
        if let Some(key) = &self.config.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(classify)?;
        let status = resp.status();
        let text = resp.text().map_err(classify)?;
        if !status.is_success() {
            return Err(ProviderError::Status { code: status.as_u16(), body: text.chars().take(512).collect() });
        }
        let parsed: WireResponse =
            serde_json::from_str(&text).map_err(|e| ProviderError::Protocol(format!("response body: {e}")))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| ProviderError::Protocol("response has no message content".into()))
    }
}
