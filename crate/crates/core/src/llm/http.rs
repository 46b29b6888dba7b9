//! OpenAI-compatible `chat/completions` client.

use std::thread;
use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::Serialize;
use serde_json::{json, Map, Value};

use super::{check_transcript, BackendConfig, ChatBackend, ChatMessage, LlmError, Role, ToolCall, ToolSpec};

pub const API_KEY_ENV: &str = "CRASHFL_API_KEY";

/// Retries apply to HTTP 429, 5xx and transport failures only.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            base_delay: Duration::from_secs(1),
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (0-based): 1 s, 2 s, 4 s, ...
    pub fn delay(&self, retry: u32) -> Duration {
        self.base_delay * 2u32.saturating_pow(retry)
    }
}

#[derive(Serialize)]
struct WireFunction<'a> {
    name: &'a str,
    description: &'a str,
    parameters: &'a Value,
}

#[derive(Serialize)]
struct WireTool<'a> {
    #[serde(rename = "type")]
    kind: &'static str,
    function: WireFunction<'a>,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: Vec<Value>,
    temperature: f64,
    max_tokens: u32,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    tools: Vec<WireTool<'a>>,
}

fn wire_message(m: &ChatMessage) -> Value {
    let role = match m.role {
        Role::System => "system",
        Role::User => "user",
        Role::Assistant => "assistant",
        Role::Tool => "tool",
    };
    match m.role {
        Role::Assistant if m.has_tool_calls() => {
            let calls: Vec<Value> = m
                .tool_calls
                .iter()
                .map(|c| {
                    json!({
                        "id": c.id,
                        "type": "function",
                        "function": {
                            "name": c.name,
                            "arguments": Value::Object(c.arguments.clone()).to_string(),
                        }
                    })
                })
                .collect();
            let content = if m.content.is_empty() {
                Value::Null
            } else {
                Value::String(m.content.clone())
            };
            json!({"role": role, "content": content, "tool_calls": calls})
        }
        Role::Tool => json!({
            "role": role,
            "tool_call_id": m.tool_call_id.clone().unwrap_or_default(),
            "content": m.content,
        }),
        _ => json!({"role": role, "content": m.content}),
    }
}

/// The JSON body sent to the endpoint.
pub fn build_request_body(
    model: &str,
    temperature: f64,
    max_tokens: u32,
    messages: &[ChatMessage],
    tools: &[ToolSpec],
) -> String {
    let req = WireRequest {
        model,
        messages: messages.iter().map(wire_message).collect(),
        temperature,
        max_tokens,
        tools: tools
            .iter()
            .map(|t| WireTool {
                kind: "function",
                function: WireFunction {
                    name: &t.name,
                    description: &t.description,
                    parameters: &t.parameters,
                },
            })
            .collect(),
    };
    serde_json::to_string(&req).expect("request serializes")
}

/// Decode `choices[0].message` into a [`ChatMessage`].
pub(crate) fn parse_response(body: &str) -> Result<ChatMessage, LlmError> {
    let v: Value = serde_json::from_str(body).map_err(|e| LlmError::BadResponse(e.to_string()))?;
    let msg = v
        .pointer("/choices/0/message")
        .ok_or_else(|| LlmError::BadResponse("no choices[0].message".into()))?;
    let content = msg.get("content").and_then(Value::as_str).unwrap_or_default();
    let calls = msg
        .get("tool_calls")
        .and_then(Value::as_array)
        .map(|calls| {
            calls
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    let raw = c.pointer("/function/arguments");
                    let arguments = match raw {
                        Some(Value::String(s)) => match serde_json::from_str::<Value>(s) {
                            Ok(Value::Object(map)) => map,
                            // keep the text so the tool layer can report it
                            _ => Map::from_iter([("_unparsed".to_string(), Value::String(s.clone()))]),
                        },
                        Some(Value::Object(map)) => map.clone(),
                        _ => Map::new(),
                    };
                    ToolCall {
                        id: c
                            .get("id")
                            .and_then(Value::as_str)
                            .map_or_else(|| format!("call_{i}"), str::to_string),
                        name: c
                            .pointer("/function/name")
                            .and_then(Value::as_str)
                            .unwrap_or_default()
                            .to_string(),
                        arguments,
                    }
                })
                .collect()
        })
        .unwrap_or_default();
    Ok(ChatMessage {
        tool_calls: calls,
        ..ChatMessage::assistant(content)
    })
}

fn is_context_overflow(body: &str) -> bool {
    let Ok(v) = serde_json::from_str::<Value>(body) else {
        return body.contains("context_length_exceeded");
    };
    v.pointer("/error/code").and_then(Value::as_str) == Some("context_length_exceeded")
}

pub struct HttpBackend {
    client: Client,
    url: String,
    model: String,
    temperature: f64,
    max_tokens: u32,
    api_key: Option<String>,
    retry: RetryPolicy,
}

impl HttpBackend {
    pub fn from_config(config: &BackendConfig) -> Result<Self, LlmError> {
        config.validate()?;
        let base = config.endpoint_url.as_deref().expect("validated");
        let url = if base.trim_end_matches('/').ends_with("/chat/completions") {
            base.to_string()
        } else {
            format!("{}/chat/completions", base.trim_end_matches('/'))
        };
        let client = Client::builder()
            .timeout(Duration::from_secs(300))
            .build()
            .map_err(|e| LlmError::BackendUnavailable(e.to_string()))?;
        Ok(Self {
            client,
            url,
            model: config.model_name.clone().expect("validated"),
            temperature: config.temperature,
            max_tokens: config.max_response_tokens,
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
            retry: RetryPolicy::default(),
        })
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    fn attempt(&self, body: &str) -> Result<String, (bool, LlmError)> {
        let mut req = self
            .client
            .post(&self.url)
            .header("content-type", "application/json")
            .body(body.to_string());
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req
            .send()
            .map_err(|e| (true, LlmError::BackendUnavailable(e.to_string())))?;
        let status = resp.status();
        let text = resp
            .text()
            .map_err(|e| (true, LlmError::BackendUnavailable(e.to_string())))?;
        if status.is_success() {
            return Ok(text);
        }
        if is_context_overflow(&text) {
            return Err((false, LlmError::ContextLengthExceeded(text)));
        }
        let retryable = status == StatusCode::TOO_MANY_REQUESTS || status.is_server_error();
        Err((retryable, LlmError::BackendUnavailable(format!("HTTP {status}: {text}"))))
    }
}

impl ChatBackend for HttpBackend {
    fn complete(&mut self, messages: &[ChatMessage], tools: &[ToolSpec]) -> Result<ChatMessage, LlmError> {
        check_transcript(messages)?;
        let body = build_request_body(&self.model, self.temperature, self.max_tokens, messages, tools);
        let mut retry = 0;
        loop {
            match self.attempt(&body) {
                Ok(text) => return parse_response(&text),
                Err((true, e)) if retry < self.retry.max_retries => {
                    let wait = self.retry.delay(retry);
                    log::warn!("completion attempt {} failed ({e}); retrying in {wait:?}", retry + 1);
                    thread::sleep(wait);
                    retry += 1;
                }
                Err((_, e)) => return Err(e),
            }
        }
    }
}
