use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::time::Duration;

use log::{debug, warn};
use serde::Deserialize;
use serde_json::{json, Value};

use super::{ChatBackend, ChatMessage, ChatRequest, ChatResponse, LlmError, Role, ToolCallRequest, UsageCounters};

/// Bounded exponential backoff for transport failures and 5xx responses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_attempts: 3, base_delay: Duration::from_millis(500) }
    }
}

impl RetryPolicy {
    fn delay(&self, attempt: u32) -> Duration {
        self.base_delay.saturating_mul(1 << attempt.saturating_sub(1).min(16))
    }
}

/// Client for `POST {base_url}/v1/chat/completions`.
pub struct HttpBackend {
    base_url: String,
    model: String,
    api_key: Option<String>,
    agent: ureq::Agent,
    retry: RetryPolicy,
    drop_reasoning: AtomicBool,
    retries: AtomicU64,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<UsageCounters>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Deserialize)]
struct WireMessage {
    #[serde(default)]
    content: Option<String>,
    #[serde(default)]
    tool_calls: Option<Vec<ToolCallRequest>>,
    #[serde(default, alias = "reasoning")]
    reasoning_content: Option<String>,
}

enum Failure {
    Transient(String),
    Permanent(LlmError),
}

impl HttpBackend {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>, api_key: Option<String>) -> Self {
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            model: model.into(),
            api_key,
            agent: ureq::AgentBuilder::new().timeout_connect(Duration::from_secs(10)).timeout(Duration::from_secs(600)).build(),
            retry: RetryPolicy::default(),
            drop_reasoning: AtomicBool::new(false),
            retries: AtomicU64::new(0),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn endpoint_url(&self) -> String {
        format!("{}/v1/chat/completions", self.base_url)
    }

    /// Total retries performed so far across all calls.
    pub fn retry_count(&self) -> u64 {
        self.retries.load(Ordering::Relaxed)
    }

    fn body(&self, req: &ChatRequest) -> Value {
        let strip = self.drop_reasoning.load(Ordering::Relaxed);
        let messages: Vec<Value> = req
            .messages
            .iter()
            .map(|m| {
                let mut v = serde_json::to_value(m).expect("messages serialize");
                if strip {
                    v.as_object_mut().expect("object").remove("reasoning_content");
                }
                v
            })
            .collect();
        let mut body = json!({
            "model": self.model,
            "messages": messages,
            "temperature": req.sampling.temperature,
            "max_tokens": req.sampling.max_tokens,
        });
        if let Some(seed) = req.sampling.seed {
            body["seed"] = json!(seed);
        }
        if !req.tools.is_empty() {
            body["tools"] = Value::Array(req.tools.clone());
            body["tool_choice"] = json!("auto");
        }
        body
    }

    fn send_once(&self, req: &ChatRequest) -> Result<ChatResponse, Failure> {
        let mut call = self.agent.post(&self.endpoint_url()).set("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            call = call.set("Authorization", &format!("Bearer {key}"));
        }
        match call.send_json(self.body(req)) {
            Ok(resp) => {
                let raw = resp.into_string().map_err(|e| Failure::Transient(format!("reading body: {e}")))?;
                parse_response(&raw).map_err(Failure::Permanent)
            }
            Err(ureq::Error::Status(code, resp)) => {
                let text = resp.into_string().unwrap_or_default();
                if (500..600).contains(&code) {
                    Err(Failure::Transient(format!("HTTP {code}: {text}")))
                } else {
                    Err(Failure::Permanent(LlmError::Rejected { status: code, message: text }))
                }
            }
            Err(ureq::Error::Transport(t)) => Err(Failure::Transient(t.to_string())),
        }
    }
}

fn parse_response(raw: &str) -> Result<ChatResponse, LlmError> {
    let malformed = |message: String| LlmError::Malformed { message, raw_body: raw.to_string() };
    let wire: WireResponse = serde_json::from_str(raw).map_err(|e| malformed(e.to_string()))?;
    let choice = wire.choices.into_iter().next().ok_or_else(|| malformed("no choices".into()))?;
    let mut tool_calls = choice.message.tool_calls.filter(|c| !c.is_empty());
    if let Some(calls) = tool_calls.as_mut() {
        for (i, c) in calls.iter_mut().enumerate() {
            if c.id.is_empty() {
                c.id = format!("call_{i}");
            }
        }
    }
    let message = ChatMessage {
        role: Role::Assistant,
        content: choice.message.content.unwrap_or_default(),
        tool_calls,
        tool_call_id: None,
        reasoning_content: choice.message.reasoning_content,
    };
    message.validate().map_err(|e| malformed(e.to_string()))?;
    Ok(ChatResponse { message, usage_reported: wire.usage.is_some(), usage: wire.usage.unwrap_or_default() })
}

impl ChatBackend for HttpBackend {
    fn chat_complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        request.validate()?;
        let carries_reasoning = request.messages.iter().any(|m| m.reasoning_content.is_some());
        let mut attempt = 0;
        loop {
            attempt += 1;
            match self.send_once(request) {
                Ok(resp) => {
                    if attempt > 1 {
                        debug!("{}: succeeded after {} retries", self.base_url, attempt - 1);
                    }
                    return Ok(resp);
                }
                Err(Failure::Permanent(LlmError::Rejected { status: 400, .. }))
                    if carries_reasoning && !self.drop_reasoning.swap(true, Ordering::Relaxed) =>
                {
                    warn!("{}: request rejected with reasoning content; resending without it", self.base_url);
                    attempt -= 1;
                }
                Err(Failure::Permanent(e)) => return Err(e),
                Err(Failure::Transient(message)) => {
                    if attempt >= self.retry.max_attempts {
                        return Err(LlmError::Retryable { message, attempts: attempt });
                    }
                    self.retries.fetch_add(1, Ordering::Relaxed);
                    warn!("{}: attempt {attempt} failed ({message}); retrying", self.base_url);
                    std::thread::sleep(self.retry.delay(attempt));
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_tool_call_response() {
        let raw = r#"{"choices":[{"message":{"role":"assistant","content":null,
            "tool_calls":[{"id":"a","type":"function","function":{"name":"lookup_documentation","arguments":"{\"query\":\"fillet\"}"}}]}}],
            "usage":{"prompt_tokens":12,"completion_tokens":3}}"#;
        let r = parse_response(raw).unwrap();
        assert_eq!(r.message.calls()[0].name, "lookup_documentation");
        assert_eq!(r.usage, UsageCounters { prompt_tokens: 12, completion_tokens: 3 });
        assert!(r.usage_reported);
    }

    #[test]
    fn missing_usage_is_flagged() {
        let r = parse_response(r#"{"choices":[{"message":{"content":"hi","reasoning":"think"}}]}"#).unwrap();
        assert!(!r.usage_reported);
        assert_eq!(r.usage, UsageCounters::default());
        assert_eq!(r.message.reasoning_content.as_deref(), Some("think"));
    }

    #[test]
    fn malformed_body_keeps_raw() {
        match parse_response("<html>oops</html>") {
            Err(LlmError::Malformed { raw_body, .. }) => assert_eq!(raw_body, "<html>oops</html>"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_response(r#"{"choices":[]}"#), Err(LlmError::Malformed { .. })));
    }

    #[test]
    fn backoff_doubles() {
        let p = RetryPolicy { max_attempts: 3, base_delay: Duration::from_millis(10) };
        assert_eq!(p.delay(1), Duration::from_millis(10));
        assert_eq!(p.delay(2), Duration::from_millis(20));
    }
}
