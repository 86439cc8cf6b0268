use std::collections::VecDeque;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

use super::{ChatBackend, ChatMessage, ChatRequest, ChatResponse, LlmError, ToolCallRequest, UsageCounters};

/// One scripted assistant turn (one JSON line of a replay script).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScriptTurn {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub content: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_calls: Option<Vec<ScriptToolCall>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reasoning: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<UsageCounters>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptToolCall {
    pub name: String,
    /// JSON text; an inline object is accepted and re-serialized.
    #[serde(deserialize_with = "arguments_text")]
    pub arguments: String,
}

fn arguments_text<'de, D: Deserializer<'de>>(d: D) -> Result<String, D::Error> {
    Ok(match serde_json::Value::deserialize(d)? {
        serde_json::Value::String(s) => s,
        other => other.to_string(),
    })
}

impl ScriptTurn {
    pub fn text(content: impl Into<String>) -> Self {
        Self { content: Some(content.into()), ..Self::default() }
    }

    pub fn call(name: impl Into<String>, arguments: serde_json::Value) -> Self {
        Self { tool_calls: Some(vec![ScriptToolCall { name: name.into(), arguments: arguments.to_string() }]), ..Self::default() }
    }

    pub fn with_usage(mut self, prompt_tokens: u64, completion_tokens: u64) -> Self {
        self.usage = Some(UsageCounters { prompt_tokens, completion_tokens });
        self
    }
}

#[derive(Debug, Error)]
pub enum ReplayLoadError {
    #[error("reading replay script {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("replay script line {line}: {message}")]
    Line { line: usize, message: String },
}

/// Yields scripted turns in order, shared across all callers.
pub struct ReplayBackend {
    turns: Mutex<VecDeque<ScriptTurn>>,
    served: AtomicUsize,
}

impl ReplayBackend {
    pub fn new(turns: impl IntoIterator<Item = ScriptTurn>) -> Self {
        Self { turns: Mutex::new(turns.into_iter().collect()), served: AtomicUsize::new(0) }
    }

    pub fn parse(text: &str) -> Result<Self, ReplayLoadError> {
        let mut turns = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let turn: ScriptTurn =
                serde_json::from_str(line).map_err(|e| ReplayLoadError::Line { line: i + 1, message: e.to_string() })?;
            turns.push(turn);
        }
        Ok(Self::new(turns))
    }

    pub fn remaining(&self) -> usize {
        self.turns.lock().expect("replay lock").len()
    }

    pub fn served(&self) -> usize {
        self.served.load(Ordering::SeqCst)
    }
}

/// Loads a JSON-lines replay script.
pub fn load_replay_script(path: impl AsRef<Path>) -> Result<ReplayBackend, ReplayLoadError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ReplayLoadError::Io { path: path.display().to_string(), source })?;
    ReplayBackend::parse(&text)
}

impl ChatBackend for ReplayBackend {
    fn chat_complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        request.validate()?;
        let turn = {
            let mut q = self.turns.lock().expect("replay lock");
            q.pop_front()
        };
        let Some(turn) = turn else {
            return Err(LlmError::ScriptExhausted(self.served()));
        };
        let n = self.served.fetch_add(1, Ordering::SeqCst);
        let tool_calls = turn.tool_calls.filter(|c| !c.is_empty()).map(|calls| {
            calls
                .into_iter()
                .enumerate()
                .map(|(i, c)| ToolCallRequest { id: format!("call_{n}_{i}"), name: c.name, arguments: c.arguments })
                .collect()
        });
        Ok(ChatResponse {
            message: ChatMessage { tool_calls, reasoning_content: turn.reasoning, ..ChatMessage::assistant(turn.content.unwrap_or_default()) },
            usage_reported: turn.usage.is_some(),
            usage: turn.usage.unwrap_or_default(),
        })
    }
}
