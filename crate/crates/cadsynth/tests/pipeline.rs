use std::path::Path;

use cadsynth::coordinator::{run_pipeline, run_pipeline_with, PipelineConfig};
use cadsynth::core::stats::TaskStatus;
use cadsynth::core::text::PartDescription;
use cadsynth::llm::{ChatBackend, ChatRequest, ChatResponse, LlmError, ScriptTurn};
use cadsynth::rollout::DesignTask;
use cadsynth::store::Store;
use serde_json::json;

const PASS: &str = "import cadquery as cq\nresult = cq.Workplane('XY').box(30, 20, 4)";

fn exec(code: &str) -> ScriptTurn {
    ScriptTurn::call("execute_and_validate", json!({ "code": code })).with_usage(50, 5)
}

fn setup(root: &Path, n_tasks: usize, turns: &[ScriptTurn], extra: serde_json::Value) -> PipelineConfig {
    let descs: Vec<PartDescription> = (0..n_tasks).map(|i| PartDescription::new(format!("plates-{i:05}"), "Plates", format!("A flat plate with {} holes.", i + 1))).collect();
    cadsynth::catalog::write_catalog(&root.join("catalog.jsonl"), &descs).unwrap();
    let script: String = turns.iter().map(|t| serde_json::to_string(t).unwrap() + "\n").collect();
    std::fs::write(root.join("script.jsonl"), script).unwrap();
    let mut cfg = json!({
        "endpoints": [{"url": "replay:script.jsonl"}],
        "task_source": "catalog.jsonl",
        "store_root": "store",
        "seed": 17,
    });
    for (k, v) in extra.as_object().unwrap() {
        cfg[k] = v.clone();
    }
    let path = root.join("config.json");
    std::fs::write(&path, cfg.to_string()).unwrap();
    PipelineConfig::load(&path).unwrap()
}

#[test]
fn two_tasks_are_committed() {
    let root = tempfile::tempdir().unwrap();
    let cfg = setup(root.path(), 2, &[exec("# mock: faces=3\nresult = 1"), exec(PASS), exec(PASS)], json!({}));
    let summary = run_pipeline(&cfg).unwrap();
    assert_eq!((summary.n_tasks, summary.accepted), (2, 2));
    assert_eq!(summary.stats.first_attempt_success_rate, Some(1.0));
    assert_eq!(summary.stats.tokens_generated_total, 15);
    let store = Store::open(&cfg.store_root).unwrap();
    let manifest = store.read_manifest().unwrap();
    assert_eq!(manifest.iter().map(|e| e.artifact_id.as_str()).collect::<Vec<_>>(), ["plates-00000", "plates-00001"]);
    assert!(store.scan_integrity().unwrap().is_clean());
    assert!(!cfg.store_root.join(".work").exists());
    let meta = store.read_meta("plates-00000").unwrap();
    assert_eq!(meta.tool_ledger.len(), 2);
    assert_eq!(meta.category, "Plates");
}

#[test]
fn empty_task_list() {
    let root = tempfile::tempdir().unwrap();
    let cfg = setup(root.path(), 0, &[], json!({}));
    let summary = run_pipeline(&cfg).unwrap();
    assert_eq!(summary.n_tasks, 0);
    assert_eq!(summary.stats.first_attempt_success_rate, None);
    assert!(Store::open(&cfg.store_root).unwrap().read_manifest().unwrap().is_empty());
}

#[test]
fn sequential_outcomes_keep_task_order() {
    let root = tempfile::tempdir().unwrap();
    let cfg = setup(root.path(), 3, &[exec(PASS), exec(PASS), exec(PASS)], json!({}));
    run_pipeline(&cfg).unwrap();
    let outcomes = Store::open(&cfg.store_root).unwrap().read_outcomes().unwrap();
    let ids: Vec<&str> = outcomes.iter().map(|o| o.task_id.as_str()).collect();
    assert_eq!(ids, ["plates-00000", "plates-00001", "plates-00002"]);
}

#[test]
fn concurrent_run_conserves_tasks() {
    let root = tempfile::tempdir().unwrap();
    // Every served turn is one of these, whichever worker asks.
    let turns: Vec<ScriptTurn> = (0..40)
        .map(|i| match i % 4 {
            0 => exec("# mock: crash\nresult = 1"),
            1 => exec("# mock: open_mesh\nresult = 1"),
            _ => exec(PASS),
        })
        .collect();
    let cfg = setup(root.path(), 12, &turns, json!({"max_concurrency": 4, "caps": {"max_attempts_per_task": 2, "max_turns_per_attempt": 2}}));
    let summary = run_pipeline(&cfg).unwrap();
    assert_eq!(summary.accepted + summary.exhausted + summary.aborted, 12);
    let store = Store::open(&cfg.store_root).unwrap();
    let outcomes = store.read_outcomes().unwrap();
    assert_eq!(outcomes.len(), 12);
    let mut ids: Vec<&str> = outcomes.iter().map(|o| o.task_id.as_str()).collect();
    ids.sort();
    ids.dedup();
    assert_eq!(ids.len(), 12);
    for o in &outcomes {
        o.check(2).unwrap();
        assert!(o.attempt_turns.iter().all(|&t| t <= 2));
    }
    assert_eq!(store.read_manifest().unwrap().len(), summary.accepted);
    assert!(store.scan_integrity().unwrap().is_clean());
}

#[test]
fn worker_crash_is_reported_to_the_model() {
    let root = tempfile::tempdir().unwrap();
    let cfg = setup(root.path(), 1, &[exec("# mock: crash\nresult = 1"), exec(PASS)], json!({}));
    run_pipeline(&cfg).unwrap();
    let store = Store::open(&cfg.store_root).unwrap();
    let o = &store.read_outcomes().unwrap()[0];
    assert_eq!(o.status, TaskStatus::Accepted);
    assert_eq!(o.attempt_turns, vec![2]);
    let conv = std::fs::read_to_string(store.artifact_dir("plates-00000").join("conversation.jsonl")).unwrap();
    assert!(conv.contains("executor failure"));
}

#[test]
fn script_running_dry_exhausts_the_task() {
    let root = tempfile::tempdir().unwrap();
    let cfg = setup(root.path(), 1, &[exec("# mock: volume=0\nresult = 1")], json!({"caps": {"max_attempts_per_task": 3, "max_turns_per_attempt": 4}}));
    let summary = run_pipeline(&cfg).unwrap();
    assert_eq!(summary.exhausted, 1);
    let o = &Store::open(&cfg.store_root).unwrap().read_outcomes().unwrap()[0];
    assert_eq!(o.attempts_used, 3);
    assert_eq!(o.attempt_turns, vec![2, 1, 1]);
}

struct Down;
impl ChatBackend for Down {
    fn chat_complete(&self, _: &ChatRequest) -> Result<ChatResponse, LlmError> {
        Err(LlmError::Retryable { message: "connection refused".into(), attempts: 3 })
    }
}

#[test]
fn unreachable_model_aborts_tasks() {
    let root = tempfile::tempdir().unwrap();
    let cfg = setup(root.path(), 2, &[], json!({}));
    let tasks: Vec<DesignTask> = cadsynth::coordinator::load_tasks(&cfg).unwrap();
    let summary = run_pipeline_with(&cfg, &tasks, &Down).unwrap();
    assert_eq!(summary.aborted, 2);
    let outcomes = Store::open(&cfg.store_root).unwrap().read_outcomes().unwrap();
    assert!(outcomes.iter().all(|o| o.status == TaskStatus::Aborted && o.error.as_deref().unwrap().contains("connection refused")));
}

#[test]
fn invalid_configs_are_rejected() {
    let root = tempfile::tempdir().unwrap();
    setup(root.path(), 1, &[], json!({}));
    let bad = [json!({"endpoints": [], "task_source": "catalog.jsonl", "store_root": "s"}), json!({"endpoints": [{"url": "replay:script.jsonl"}], "task_source": "catalog.jsonl", "store_root": "s", "max_concurrency": 0})];
    for cfg in bad {
        let path = root.path().join("bad.json");
        std::fs::write(&path, cfg.to_string()).unwrap();
        assert!(PipelineConfig::load(&path).is_err(), "{cfg}");
    }
}
