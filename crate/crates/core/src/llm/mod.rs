//! Chat-model bridge: providers, prompt templates, reply parsers, and the
//! staged text-to-panel and chat-edit flows.

mod bridge;
mod http;
pub mod parse;
mod provider;
mod templates;

pub use bridge::{derive_ops, Bridge, BridgeConfig, BridgeError, BridgeErrorKind, ChatEdit, SessionEvent, SessionLog, MIN_BOX_SIZE};
pub use http::{HttpChatProvider, HttpProviderConfig, ENV_API_KEY, ENV_BASE_URL, ENV_MODEL};
pub use parse::ParseError;
pub use provider::{
    ChatMessage, ChatParams, ChatProvider, ChatRequest, MockFailure, MockProvider, MockReply, ProviderError, RetryPolicy,
    Retrying, Role, Stage, Transcript, TranscriptEntry, TranscriptError,
};
pub use templates::{PromptTemplateSet, TemplateError, STAGES};
