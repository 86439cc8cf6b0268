//! The per-task repair loop: attempts of up to N turns, each turn one model
//! step whose tool calls are all dispatched before the next step.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

use cadsynth_core::stats::{TaskOutcome, TaskStatus, TokenCounts};
use cadsynth_core::text::PartDescription;
use log::{debug, info, warn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::llm::{ChatBackend, ChatMessage, ChatRequest, LlmError, Role, SamplingParams, UsageCounters};
use crate::tools::{tool_schemas, Execution, ToolRegistry};

pub const MAX_TURNS_PER_ATTEMPT: u32 = 10;
pub const MAX_ATTEMPTS_PER_TASK: u32 = 100;
pub const ATTEMPT_BUDGET: Duration = Duration::from_secs(15 * 60);

const NUDGE: &str = "No tool call was made. Submit the complete program by calling execute_and_validate.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Caps {
    pub max_turns_per_attempt: u32,
    pub max_attempts_per_task: u32,
}

impl Default for Caps {
    fn default() -> Self {
        Self { max_turns_per_attempt: MAX_TURNS_PER_ATTEMPT, max_attempts_per_task: MAX_ATTEMPTS_PER_TASK }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DesignTask {
    pub task_id: String,
    pub description: PartDescription,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_snippet: Option<String>,
}

#[derive(Debug, Clone)]
pub struct RolloutSettings {
    pub caps: Caps,
    pub sampling: SamplingParams,
    pub attempt_budget: Duration,
    pub codegen_prompt: String,
}

impl RolloutSettings {
    pub fn new(codegen_prompt: impl Into<String>) -> Self {
        Self { caps: Caps::default(), sampling: SamplingParams::default(), attempt_budget: ATTEMPT_BUDGET, codegen_prompt: codegen_prompt.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub attempt: u32,
    pub turn: u32,
    pub tool: String,
    pub args_sha256: String,
    pub result_sha256: String,
}

fn digest(text: &str) -> String {
    let d = Sha256::digest(text.as_bytes());
    d.iter().map(|b| format!("{b:02x}")).collect()
}

/// Live state of one rollout.
#[derive(Debug, Clone, Default)]
pub struct RolloutState {
    pub attempt_index: u32,
    pub turn_index: u32,
    pub transcript: Vec<ChatMessage>,
    pub tool_ledger: Vec<LedgerEntry>,
    pub last_execution: Option<Execution>,
    pub usage: UsageCounters,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TranscriptError {
    #[error("transcript does not start with the system prompt")]
    NoSystemPrompt,
    #[error("message {0}: tool call `{1}` has no reply before the next assistant turn")]
    Unanswered(usize, String),
    #[error("message {0}: tool reply `{1}` answers no pending call")]
    Orphan(usize, String),
    #[error("message {0}: {1}")]
    Message(usize, String),
}

/// Checks that the system prompt comes first and that every tool call is
/// answered before the next assistant message.
pub fn check_transcript(transcript: &[ChatMessage]) -> Result<(), TranscriptError> {
    if transcript.first().map(|m| m.role) != Some(Role::System) {
        return Err(TranscriptError::NoSystemPrompt);
    }
    let mut pending: Vec<(usize, String)> = Vec::new();
    for (i, m) in transcript.iter().enumerate() {
        m.validate().map_err(|e| TranscriptError::Message(i, e.to_string()))?;
        match m.role {
            Role::Assistant => {
                if let Some((at, id)) = pending.first() {
                    return Err(TranscriptError::Unanswered(*at, id.clone()));
                }
                pending = m.calls().iter().map(|c| (i, c.id.clone())).collect();
            }
            Role::Tool => {
                let id = m.tool_call_id.clone().unwrap_or_default();
                match pending.iter().position(|(_, p)| *p == id) {
                    Some(k) => {
                        pending.remove(k);
                    }
                    None => return Err(TranscriptError::Orphan(i, id)),
                }
            }
            _ => {}
        }
    }
    match pending.first() {
        Some((at, id)) => Err(TranscriptError::Unanswered(*at, id.clone())),
        None => Ok(()),
    }
}

impl RolloutState {
    pub fn check_invariants(&self, caps: &Caps) -> Result<(), String> {
        if self.attempt_index > caps.max_attempts_per_task {
            return Err(format!("attempt {} over cap {}", self.attempt_index, caps.max_attempts_per_task));
        }
        if self.turn_index > caps.max_turns_per_attempt {
            return Err(format!("turn {} over cap {}", self.turn_index, caps.max_turns_per_attempt));
        }
        check_transcript(&self.transcript).map_err(|e| e.to_string())
    }
}

/// What one task produced. `outcome.artifact_id` is the id to commit under
/// when `accepted` is set.
#[derive(Debug, Clone)]
pub struct RolloutResult {
    pub outcome: TaskOutcome,
    pub accepted: Option<Execution>,
    /// Messages of the final attempt.
    pub transcript: Vec<ChatMessage>,
    pub ledger: Vec<LedgerEntry>,
}

#[derive(Debug, Error)]
pub enum RolloutError {
    /// The endpoint is unreachable; the coordinator may retry the task.
    #[error("llm unavailable: {0}")]
    Llm(LlmError),
}

pub fn opening_messages(task: &DesignTask, codegen_prompt: &str) -> Vec<ChatMessage> {
    let mut user = format!("Part category: {}\nPart description: {}", task.description.category, task.description.text);
    if let Some(snippet) = &task.reference_snippet {
        user.push_str(
            "\n\nReference code follows. Learn from its structure and techniques, then write new code for the \
             description above; do not reuse its parameters.\n```python\n",
        );
        user.push_str(snippet.trim_end());
        user.push_str("\n```");
    }
    vec![ChatMessage::system(codegen_prompt), ChatMessage::user(user)]
}

#[allow(clippy::large_enum_variant)]
enum AttemptEnd {
    Accepted(Execution),
    TurnCap,
    Budget,
    LlmFailed(LlmError),
}

/// Runs one task to acceptance or exhaustion.
pub fn run_design_task(
    task: &DesignTask,
    llm: &dyn ChatBackend,
    tools: &ToolRegistry,
    settings: &RolloutSettings,
    work_dir: &Path,
) -> Result<RolloutResult, RolloutError> {
    let caps = settings.caps;
    let schemas = tool_schemas();
    let mut state = RolloutState::default();
    let mut attempt_turns = Vec::new();
    let mut counts: BTreeMap<String, u64> = tools.names().iter().map(|n| (n.to_string(), 0)).collect();
    let mut accepted = None;

    while state.attempt_index < caps.max_attempts_per_task {
        state.attempt_index += 1;
        state.turn_index = 0;
        state.transcript = opening_messages(task, &settings.codegen_prompt);
        let started = Instant::now();
        let end = loop {
            if state.turn_index == caps.max_turns_per_attempt {
                break AttemptEnd::TurnCap;
            }
            if started.elapsed() >= settings.attempt_budget {
                break AttemptEnd::Budget;
            }
            state.turn_index += 1;
            let req = ChatRequest { messages: state.transcript.clone(), tools: schemas.clone(), sampling: settings.sampling.clone() };
            let resp = match llm.chat_complete(&req) {
                Ok(r) => r,
                Err(e) if e.is_retryable() => return Err(RolloutError::Llm(e)),
                Err(e) => break AttemptEnd::LlmFailed(e),
            };
            state.usage += resp.usage;
            let calls = resp.message.calls().to_vec();
            state.transcript.push(resp.message);
            if calls.is_empty() {
                state.transcript.push(ChatMessage::user(NUDGE));
                continue;
            }
            let mut passing = None;
            for (i, call) in calls.iter().enumerate() {
                let out_dir = work_dir.join(format!("a{:03}", state.attempt_index)).join(format!("t{:02}_{i}", state.turn_index));
                let out = tools.dispatch(call, &out_dir);
                *counts.entry(call.name.clone()).or_insert(0) += 1;
                state.tool_ledger.push(LedgerEntry {
                    attempt: state.attempt_index,
                    turn: state.turn_index,
                    tool: call.name.clone(),
                    args_sha256: digest(&call.arguments),
                    result_sha256: digest(&out.content),
                });
                state.transcript.push(ChatMessage::tool(call.id.clone(), out.content.clone()));
                if let Some(exec) = out.execution {
                    if exec.verdict.passed {
                        passing = Some(exec.clone());
                    }
                    state.last_execution = Some(exec);
                }
            }
            debug_assert!(state.check_invariants(&caps).is_ok());
            if let Some(exec) = passing {
                break AttemptEnd::Accepted(exec);
            }
        };
        attempt_turns.push(state.turn_index);
        match end {
            AttemptEnd::Accepted(exec) => {
                accepted = Some(exec);
                break;
            }
            AttemptEnd::TurnCap => debug!("{}: attempt {} hit the turn cap", task.task_id, state.attempt_index),
            AttemptEnd::Budget => warn!("{}: attempt {} ran out of wall-clock budget", task.task_id, state.attempt_index),
            AttemptEnd::LlmFailed(e) => warn!("{}: attempt {} aborted: {e}", task.task_id, state.attempt_index),
        }
    }

    let status = if accepted.is_some() { TaskStatus::Accepted } else { TaskStatus::Exhausted };
    info!("{}: {:?} after {} attempts", task.task_id, status, state.attempt_index);
    let outcome = TaskOutcome {
        task_id: task.task_id.clone(),
        status,
        attempts_used: state.attempt_index,
        total_turns: attempt_turns.iter().sum(),
        attempt_turns,
        tool_call_counts: counts,
        tokens: TokenCounts { prompt: state.usage.prompt_tokens, completion: state.usage.completion_tokens },
        artifact_id: accepted.as_ref().map(|_| task.task_id.clone()),
        error: None,
    };
    Ok(RolloutResult { outcome, accepted, transcript: state.transcript, ledger: state.tool_ledger })
}

/// Per-tool tally of a ledger.
pub fn ledger_counts(ledger: &[LedgerEntry]) -> BTreeMap<String, u64> {
    let mut m = BTreeMap::new();
    for e in ledger {
        *m.entry(e.tool.clone()).or_insert(0) += 1;
    }
    m
}
