//! Chat-completions client with tool calling.
//!
//! [`ChatMessage`] and [`ToolCallRequest`] serialize to the OpenAI
//! chat-completions wire shape, which is also the format of persisted
//! conversation logs. Two backends implement [`ChatBackend`]: [`HttpBackend`]
//! for any OpenAI-compatible server and [`ReplayBackend`] for scripted,
//! deterministic runs.

mod http;
mod replay;

pub use http::{HttpBackend, RetryPolicy};
pub use replay::{load_replay_script, ReplayBackend, ReplayLoadError, ScriptToolCall, ScriptTurn};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
    Tool,
}

/// A function call requested by the model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToolCallRequest {
    pub id: String,
    pub name: String,
    /// JSON text; expected to be an object but kept verbatim either way.
    pub arguments: String,
}

impl ToolCallRequest {
    pub fn parsed_arguments(&self) -> Result<serde_json::Map<String, serde_json::Value>, String> {
        match serde_json::from_str::<serde_json::Value>(&self.arguments) {
            Ok(serde_json::Value::Object(map)) => Ok(map),
            Ok(_) => Err("arguments must be a JSON object".into()),
            Err(e) => Err(format!("arguments are not valid JSON: {e}")),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct WireFunction {
    name: String,
    #[serde(default)]
    arguments: String,
}

#[derive(Serialize, Deserialize)]
struct WireToolCall {
    #[serde(default)]
    id: String,
    #[serde(rename = "type", default = "function_type")]
    kind: String,
    function: WireFunction,
}

fn function_type() -> String {
    "function".into()
}

impl Serialize for ToolCallRequest {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        WireToolCall {
            id: self.id.clone(),
            kind: function_type(),
            function: WireFunction { name: self.name.clone(), arguments: self.arguments.clone() },
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for ToolCallRequest {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let w = WireToolCall::deserialize(d)?;
        Ok(Self { id: w.id, name: w.function.name, arguments: w.function.arguments })
    }
}

fn null_as_empty<'de, D: Deserializer<'de>>(d: D) -> Result<String, D::Error> {
    Ok(Option::<String>::deserialize(d)?.unwrap_or_default())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    #[serde(default, deserialize_with = "null_as_empty")]
    pub content: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_calls: Option<Vec<ToolCallRequest>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_call_id: Option<String>,
    /// Model reasoning, logged verbatim. Dropped from requests to endpoints
    /// that reject it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reasoning_content: Option<String>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MessageError {
    #[error("tool message without tool_call_id")]
    ToolWithoutId,
    #[error("tool_calls on a {0:?} message")]
    ToolCallsOnNonAssistant(Role),
    #[error("duplicate tool call id `{0}`")]
    DuplicateCallId(String),
}

impl ChatMessage {
    fn plain(role: Role, content: impl Into<String>) -> Self {
        Self { role, content: content.into(), tool_calls: None, tool_call_id: None, reasoning_content: None }
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

    pub fn tool(call_id: impl Into<String>, content: impl Into<String>) -> Self {
        Self { tool_call_id: Some(call_id.into()), ..Self::plain(Role::Tool, content) }
    }

    pub fn calls(&self) -> &[ToolCallRequest] {
        self.tool_calls.as_deref().unwrap_or(&[])
    }

    pub fn validate(&self) -> Result<(), MessageError> {
        if self.role == Role::Tool && self.tool_call_id.is_none() {
            return Err(MessageError::ToolWithoutId);
        }
        if self.role != Role::Assistant && self.tool_calls.is_some() {
            return Err(MessageError::ToolCallsOnNonAssistant(self.role));
        }
        let mut seen = std::collections::BTreeSet::new();
        for c in self.calls() {
            if !seen.insert(c.id.as_str()) {
                return Err(MessageError::DuplicateCallId(c.id.clone()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageCounters {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl std::ops::AddAssign for UsageCounters {
    fn add_assign(&mut self, rhs: Self) {
        self.prompt_tokens += rhs.prompt_tokens;
        self.completion_tokens += rhs.completion_tokens;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingParams {
    pub temperature: f64,
    pub max_tokens: u32,
    pub seed: Option<u64>,
}

impl Default for SamplingParams {
    fn default() -> Self {
        Self { temperature: 1.0, max_tokens: 4096, seed: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    /// Function schemas in the chat-completions `tools` shape. Empty means
    /// tool calling is not offered.
    pub tools: Vec<serde_json::Value>,
    pub sampling: SamplingParams,
}

impl ChatRequest {
    pub fn validate(&self) -> Result<(), LlmError> {
        match self.messages.first() {
            None => Err(LlmError::InvalidRequest("messages must not be empty".into())),
            Some(m) if m.role != Role::System => Err(LlmError::InvalidRequest("first message must be the system prompt".into())),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatResponse {
    pub message: ChatMessage,
    pub usage: UsageCounters,
    /// False when the endpoint sent no usage block and zeros were filled in.
    pub usage_reported: bool,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LlmError {
    #[error("endpoint unavailable after {attempts} attempts: {message}")]
    Retryable { message: String, attempts: u32 },
    #[error("request rejected (HTTP {status}): {message}")]
    Rejected { status: u16, message: String },
    #[error("malformed response: {message}")]
    Malformed { message: String, raw_body: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("replay script exhausted after {0} turns")]
    ScriptExhausted(usize),
    #[error("no endpoint available: all endpoints quarantined")]
    NoEndpoint,
}

impl LlmError {
    /// Transient failures that a later call (or another endpoint) may not hit.
    pub fn is_retryable(&self) -> bool {
        matches!(self, LlmError::Retryable { .. } | LlmError::NoEndpoint)
    }
}

pub trait ChatBackend: Send + Sync {
    fn chat_complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError>;
}

impl<T: ChatBackend + ?Sized> ChatBackend for std::sync::Arc<T> {
    fn chat_complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        (**self).chat_complete(request)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tool_call_wire_shape() {
        let m = ChatMessage {
            tool_calls: Some(vec![ToolCallRequest { id: "c1".into(), name: "execute_and_validate".into(), arguments: "{\"code\":\"x\"}".into() }]),
            ..ChatMessage::assistant("")
        };
        let v = serde_json::to_value(&m).unwrap();
        assert_eq!(v["tool_calls"][0]["type"], "function");
        assert_eq!(v["tool_calls"][0]["function"]["name"], "execute_and_validate");
        assert_eq!(serde_json::from_value::<ChatMessage>(v).unwrap(), m);
    }

    #[test]
    fn null_content_reads_as_empty() {
        let m: ChatMessage = serde_json::from_str(r#"{"role":"assistant","content":null}"#).unwrap();
        assert_eq!(m.content, "");
    }

    #[test]
    fn message_invariants() {
        let mut t = ChatMessage::tool("c", "{}");
        assert!(t.validate().is_ok());
        t.tool_call_id = None;
        assert_eq!(t.validate(), Err(MessageError::ToolWithoutId));
        let mut u = ChatMessage::user("hi");
        u.tool_calls = Some(vec![]);
        assert_eq!(u.validate(), Err(MessageError::ToolCallsOnNonAssistant(Role::User)));
        let call = ToolCallRequest { id: "x".into(), name: "n".into(), arguments: "{}".into() };
        let a = ChatMessage { tool_calls: Some(vec![call.clone(), call]), ..ChatMessage::assistant("") };
        assert_eq!(a.validate(), Err(MessageError::DuplicateCallId("x".into())));
    }

    #[test]
    fn request_must_start_with_system() {
        let req = ChatRequest { messages: vec![ChatMessage::user("x")], tools: vec![], sampling: SamplingParams::default() };
        assert!(matches!(req.validate(), Err(LlmError::InvalidRequest(_))));
        let req = ChatRequest { messages: vec![], ..req };
        assert!(req.validate().is_err());
    }

    #[test]
    fn argument_parsing() {
        let c = |a: &str| ToolCallRequest { id: "i".into(), name: "n".into(), arguments: a.into() };
        assert!(c(r#"{"query":"fillet"}"#).parsed_arguments().is_ok());
        assert!(c("[1]").parsed_arguments().is_err());
        assert!(c("{").parsed_arguments().is_err());
    }
}
