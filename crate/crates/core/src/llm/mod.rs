//! Chat-completion backends with tool calling.

mod http;
mod scripted;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

pub use http::{build_request_body, HttpBackend, RetryPolicy, API_KEY_ENV};
pub use scripted::{load_script, parse_script, ScriptStep, ScriptedBackend};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LlmError {
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("context length exceeded: {0}")]
    ContextLengthExceeded(String),
    #[error("script exhausted after {0} replies")]
    ScriptExhausted(usize),
    #[error("malformed script: {0}")]
    MalformedScript(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("unexpected backend response: {0}")]
    BadResponse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
    Tool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub id: String,
    pub name: String,
    pub arguments: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tool_calls: Vec<ToolCall>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_call_id: Option<String>,
}

impl ChatMessage {
    fn plain(role: Role, content: impl Into<String>) -> Self {
        Self {
            role,
            content: content.into(),
            tool_calls: Vec::new(),
            tool_call_id: None,
        }
    }

    pub fn system(content: impl Into<String>) -> Self {
        Self::plain(Role::System, content)
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self::plain(Role::User, content)
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self::plain(Role::Assistant, content)
    }

    pub fn assistant_calls(calls: Vec<ToolCall>) -> Self {
        Self {
            tool_calls: calls,
            ..Self::plain(Role::Assistant, "")
        }
    }

    pub fn tool(call_id: impl Into<String>, content: impl Into<String>) -> Self {
        Self {
            tool_call_id: Some(call_id.into()),
            ..Self::plain(Role::Tool, content)
        }
    }

    pub fn has_tool_calls(&self) -> bool {
        !self.tool_calls.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub name: String,
    pub description: String,
    /// JSON-schema object describing the arguments.
    pub parameters: Value,
}

pub trait ChatBackend: Send {
    /// Produce the next assistant message. `messages` must start with a
    /// system message.
    fn complete(&mut self, messages: &[ChatMessage], tools: &[ToolSpec]) -> Result<ChatMessage, LlmError>;
}

pub(crate) fn check_transcript(messages: &[ChatMessage]) -> Result<(), LlmError> {
    match messages.first() {
        Some(m) if m.role == Role::System => Ok(()),
        Some(_) => Err(LlmError::InvalidRequest("transcript must start with a system message".into())),
        None => Err(LlmError::InvalidRequest("empty transcript".into())),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Http,
    Scripted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub endpoint_url: Option<String>,
    pub model_name: Option<String>,
    pub temperature: f64,
    pub max_response_tokens: u32,
    pub script_path: Option<PathBuf>,
}

impl BackendConfig {
    pub const DEFAULT_TEMPERATURE: f64 = 1.0;
    pub const DEFAULT_MAX_RESPONSE_TOKENS: u32 = 4096;

    pub fn http(endpoint_url: impl Into<String>, model_name: impl Into<String>) -> Self {
        Self {
            kind: BackendKind::Http,
            endpoint_url: Some(endpoint_url.into()),
            model_name: Some(model_name.into()),
            temperature: Self::DEFAULT_TEMPERATURE,
            max_response_tokens: Self::DEFAULT_MAX_RESPONSE_TOKENS,
            script_path: None,
        }
    }

    pub fn scripted(script_path: impl Into<PathBuf>) -> Self {
        Self {
            kind: BackendKind::Scripted,
            endpoint_url: None,
            model_name: None,
            temperature: Self::DEFAULT_TEMPERATURE,
            max_response_tokens: Self::DEFAULT_MAX_RESPONSE_TOKENS,
            script_path: Some(script_path.into()),
        }
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        match self.kind {
            BackendKind::Http if self.endpoint_url.is_none() || self.model_name.is_none() => Err(
                LlmError::InvalidRequest("http backend needs an endpoint url and a model name".into()),
            ),
            BackendKind::Scripted if self.script_path.is_none() => {
                Err(LlmError::InvalidRequest("scripted backend needs a script path".into()))
            }
            _ => Ok(()),
        }
    }

    /// Build a fresh backend instance. Scripted backends hold a cursor, so
    /// every agent run needs its own.
    pub fn build(&self) -> Result<Box<dyn ChatBackend>, LlmError> {
        self.validate()?;
        match self.kind {
            BackendKind::Http => Ok(Box::new(HttpBackend::from_config(self)?)),
            BackendKind::Scripted => {
                let path = self.script_path.as_ref().expect("validated");
                Ok(Box::new(ScriptedBackend::new(load_script(path)?)))
            }
        }
    }
}

/// Convenience: one completion through a freshly built backend.
pub fn complete(
    config: &BackendConfig,
    messages: &[ChatMessage],
    tools: &[ToolSpec],
) -> Result<ChatMessage, LlmError> {
    config.build()?.complete(messages, tools)
}
