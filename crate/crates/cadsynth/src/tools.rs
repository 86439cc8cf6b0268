//! The tools offered to the model and their dispatch.
//!
//! Dispatch never fails: unknown tools, bad arguments and executor faults
//! all come back as JSON payloads the model can read.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use cadsynth_core::gates::{evaluate_report, GeometryGates, MeshEvidence, ValidationReport, Verdict};
use cadsynth_core::tfidf::DEFAULT_TOP_K;
use serde_json::{json, Map, Value};

use crate::docs::{grep_documentation, DocIndex, DEFAULT_GREP_CONTEXT};
use crate::executor::Executor;
use crate::llm::ToolCallRequest;

pub const EXECUTE_AND_VALIDATE: &str = "execute_and_validate";
pub const LOOKUP_DOCUMENTATION: &str = "lookup_documentation";
pub const GREP_DOCUMENTATION: &str = "grep_documentation";

const MAX_LOOKUP_K: u64 = 50;
const MAX_GREP_CONTEXT: u64 = 10;

/// Function schemas in chat-completions `tools` form.
pub fn tool_schemas() -> Vec<Value> {
    let f = |name: &str, description: &str, parameters: Value| {
        json!({"type": "function", "function": {"name": name, "description": description, "parameters": parameters}})
    };
    vec![
        f(
            EXECUTE_AND_VALIDATE,
            "Run a complete CadQuery program whose final shape is stored in `result`, then validate the geometry and exports.",
            json!({"type": "object", "properties": {"code": {"type": "string"}}, "required": ["code"], "additionalProperties": false}),
        ),
        f(
            LOOKUP_DOCUMENTATION,
            "Search the CadQuery API documentation and return the best matching sections.",
            json!({"type": "object", "properties": {"query": {"type": "string"}, "k": {"type": "integer", "minimum": 1, "maximum": MAX_LOOKUP_K}}, "required": ["query"], "additionalProperties": false}),
        ),
        f(
            GREP_DOCUMENTATION,
            "Find documentation lines matching a regular expression.",
            json!({"type": "object", "properties": {"pattern": {"type": "string"}, "context": {"type": "integer", "minimum": 0, "maximum": MAX_GREP_CONTEXT}}, "required": ["pattern"], "additionalProperties": false}),
        ),
    ]
}

/// Details of an `execute_and_validate` call, kept for acceptance.
#[derive(Debug, Clone)]
pub struct Execution {
    pub code: String,
    pub out_dir: PathBuf,
    pub report: ValidationReport,
    pub verdict: Verdict,
}

#[derive(Debug, Clone)]
pub struct ToolOutput {
    /// JSON text sent back as the tool message.
    pub content: String,
    pub execution: Option<Execution>,
}

impl ToolOutput {
    fn json(v: Value) -> Self {
        Self { content: v.to_string(), execution: None }
    }

    fn error(msg: impl Into<String>) -> Self {
        Self::json(json!({"error": msg.into()}))
    }

    pub fn passed(&self) -> bool {
        self.execution.as_ref().is_some_and(|e| e.verdict.passed)
    }
}

pub struct ToolRegistry {
    pub executor: Arc<dyn Executor>,
    pub docs: Arc<DocIndex>,
    pub gates: GeometryGates,
}

fn check_keys(args: &Map<String, Value>, allowed: &[&str]) -> Result<(), String> {
    match args.keys().find(|k| !allowed.contains(&k.as_str())) {
        Some(k) => Err(format!("unexpected argument `{k}`")),
        None => Ok(()),
    }
}

fn required_str<'a>(args: &'a Map<String, Value>, key: &str) -> Result<&'a str, String> {
    match args.get(key) {
        Some(Value::String(s)) => Ok(s),
        Some(_) => Err(format!("`{key}` must be a string")),
        None => Err(format!("missing required argument `{key}`")),
    }
}

fn optional_uint(args: &Map<String, Value>, key: &str, min: u64, max: u64, default: u64) -> Result<u64, String> {
    match args.get(key) {
        None | Some(Value::Null) => Ok(default),
        Some(v) => match v.as_u64() {
            Some(n) if (min..=max).contains(&n) => Ok(n),
            _ => Err(format!("`{key}` must be an integer in [{min}, {max}]")),
        },
    }
}

impl ToolRegistry {
    pub fn names(&self) -> [&'static str; 3] {
        [EXECUTE_AND_VALIDATE, LOOKUP_DOCUMENTATION, GREP_DOCUMENTATION]
    }

    /// Routes one call. `out_dir` receives exports if the call executes code.
    pub fn dispatch(&self, call: &ToolCallRequest, out_dir: &Path) -> ToolOutput {
        let args = match call.parsed_arguments() {
            Ok(a) => a,
            Err(e) => return ToolOutput::error(e),
        };
        let result = match call.name.as_str() {
            EXECUTE_AND_VALIDATE => self.execute(&args, out_dir),
            LOOKUP_DOCUMENTATION => self.lookup(&args),
            GREP_DOCUMENTATION => self.grep(&args),
            _ => return ToolOutput::error("unknown tool"),
        };
        result.unwrap_or_else(ToolOutput::error)
    }

    fn execute(&self, args: &Map<String, Value>, out_dir: &Path) -> Result<ToolOutput, String> {
        check_keys(args, &["code"])?;
        let code = required_str(args, "code")?;
        if code.trim().is_empty() {
            return Err("`code` must not be empty".into());
        }
        let report = match self.executor.execute(code, out_dir) {
            Ok(r) => r,
            Err(e) => return Ok(ToolOutput::error(format!("executor failure: {e}"))),
        };
        let verdict = self.judge(&report);
        let mut payload = serde_json::to_value(&report).expect("report serializes");
        let obj = payload.as_object_mut().expect("report is an object");
        obj.remove("artifact_paths");
        obj.insert("accepted".into(), json!(verdict.passed));
        obj.insert("failed_checks".into(), json!(verdict.codes()));
        Ok(ToolOutput {
            content: payload.to_string(),
            execution: Some(Execution { code: code.to_string(), out_dir: out_dir.to_path_buf(), report, verdict }),
        })
    }

    fn judge(&self, report: &ValidationReport) -> Verdict {
        let path = report.artifact_paths.as_ref().map(|p| PathBuf::from(&p.stl));
        let loaded = match path {
            Some(p) if p.exists() => Some(crate::stl::read_stl(&p)),
            _ => None,
        };
        let evidence = match &loaded {
            None => MeshEvidence::Missing,
            Some(Err(_)) => MeshEvidence::Unreadable,
            Some(Ok(mesh)) => MeshEvidence::Mesh(mesh),
        };
        evaluate_report(report, &self.gates, evidence)
    }

    fn lookup(&self, args: &Map<String, Value>) -> Result<ToolOutput, String> {
        check_keys(args, &["query", "k"])?;
        let query = required_str(args, "query")?;
        let k = optional_uint(args, "k", 1, MAX_LOOKUP_K, DEFAULT_TOP_K as u64)?;
        let r = self.docs.tfidf.lookup(query, k as usize).map_err(|e| e.to_string())?;
        let mut v = serde_json::to_value(&r).expect("lookup serializes");
        if r.no_matches {
            v["message"] = json!("no documentation matched the query; try API names such as fillet, extrude or hole");
        }
        Ok(ToolOutput::json(v))
    }

    fn grep(&self, args: &Map<String, Value>) -> Result<ToolOutput, String> {
        check_keys(args, &["pattern", "context"])?;
        let pattern = required_str(args, "pattern")?;
        let context = optional_uint(args, "context", 0, MAX_GREP_CONTEXT, DEFAULT_GREP_CONTEXT as u64)?;
        match grep_documentation(&self.docs.corpus, pattern, context as usize) {
            Ok(r) => Ok(ToolOutput::json(serde_json::to_value(&r).expect("grep serializes"))),
            Err(e) => Err(format!("invalid regex: {e}")),
        }
    }
}
