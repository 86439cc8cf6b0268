//! The worker protocol as seen from outside: a real child process speaking
//! NDJSON, checked against the published contract.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use cadsynth::core::gates::{ExecStatus, ExportStatus};
use cadsynth::executor::{ExecRequest, Executor, ExecutorError, SubprocessExecutor, REPLY_GRACE};
use serde_json::{json, Value};

fn worker_cmd() -> String {
    format!("{} mock-worker", env!("CARGO_BIN_EXE_cadsynth"))
}

fn schema() -> Value {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../contracts/exec_protocol.schema.json");
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn validator(definition: &str) -> jsonschema::Validator {
    let mut s = schema();
    s["$ref"] = json!(format!("#/definitions/{definition}"));
    jsonschema::validator_for(&s).unwrap()
}

/// Sends raw lines to a fresh worker and collects one reply per line.
fn converse(requests: &[Value]) -> Vec<Value> {
    let mut child = Command::new(env!("CARGO_BIN_EXE_cadsynth"))
        .arg("mock-worker")
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut stdin = child.stdin.take().unwrap();
    for r in requests {
        writeln!(stdin, "{r}").unwrap();
    }
    drop(stdin);
    let replies = BufReader::new(child.stdout.take().unwrap()).lines().map(|l| serde_json::from_str(&l.unwrap()).unwrap()).collect();
    child.wait().unwrap();
    replies
}

const OK_CODE: &str = "import cadquery as cq\nresult = cq.Workplane('XY').box(20, 10, 5)";

#[test]
fn replies_conform_to_contract() {
    let dir = tempfile::tempdir().unwrap();
    let out = |n: &str| dir.path().join(n).display().to_string();
    let requests = vec![
        json!({"request_id": "r1", "code": OK_CODE, "timeout_s": 5.0, "out_dir": out("r1")}),
        json!({"request_id": "r2", "code": "result = undefined_name", "timeout_s": 5.0, "out_dir": out("r2")}),
        json!({"request_id": "r3", "code": "# mock: exec=timeout\nresult = 1", "timeout_s": 5.0, "out_dir": out("r3")}),
        json!({"request_id": "r4", "code": format!("# mock: stl_export=error\n{OK_CODE}"), "timeout_s": 5.0, "out_dir": out("r4")}),
        json!({"request_id": "r5", "code": OK_CODE, "timeout_s": 9999.0, "out_dir": out("r5")}),
    ];
    let req_schema = validator("request");
    for r in &requests[..4] {
        assert!(req_schema.is_valid(r), "{r}");
    }
    assert!(!req_schema.is_valid(&requests[4]));

    let replies = converse(&requests);
    assert_eq!(replies.len(), requests.len());
    let resp_schema = validator("response");
    for r in &replies {
        let errors: Vec<String> = resp_schema.iter_errors(r).map(|e| e.to_string()).collect();
        assert!(errors.is_empty(), "{r}: {errors:?}");
    }
    let ids: Vec<&str> = replies.iter().map(|r| r["request_id"].as_str().unwrap()).collect();
    assert_eq!(ids, ["r1", "r2", "r3", "r4", "r5"]);
    assert_eq!(replies[0]["exec_status"], "ok");
    assert_eq!(replies[0]["exports"], json!({"stl": "ok", "step": "ok"}));
    assert!(dir.path().join("r1/model.stl").exists() && dir.path().join("r1/model.step").exists());
    assert_eq!(replies[1]["exec_status"], "error");
    assert!(replies[1]["traceback"].as_str().unwrap().contains("NameError"));
    assert_eq!(replies[2]["exec_status"], "timeout");
    assert!(replies[2].get("topo").is_none());
    assert!(replies[3]["exports"]["stl"]["error"].is_string());
    assert_eq!(replies[4]["exec_status"], "error");
}

#[test]
fn contract_rejects_inconsistent_replies() {
    let resp_schema = validator("response");
    let good = json!({"request_id": "x", "wall_time_s": 0.1, "exec_status": "error", "error_message": "boom"});
    assert!(resp_schema.is_valid(&good));
    let mut topo_on_error = good.clone();
    topo_on_error["topo"] = json!({"num_brep_faces": 6, "num_solids": 1, "volume": 1.0, "bbox": [0, 0, 0, 1, 1, 1]});
    assert!(!resp_schema.is_valid(&topo_on_error));
    let mut bad_status = good.clone();
    bad_status["exec_status"] = json!("crashed");
    assert!(!resp_schema.is_valid(&bad_status));
    let mut short_bbox = json!({"request_id": "x", "wall_time_s": 0.1, "exec_status": "ok"});
    short_bbox["topo"] = json!({"num_brep_faces": 6, "num_solids": 1, "volume": 1.0, "bbox": [0, 0, 1]});
    assert!(!resp_schema.is_valid(&short_bbox));
}

#[test]
fn request_type_matches_contract() {
    let req = ExecRequest { request_id: "q".into(), code: "result = 1".into(), timeout_s: 60.0, out_dir: "/tmp/x".into() };
    assert!(validator("request").is_valid(&serde_json::to_value(&req).unwrap()));
    let bad = ExecRequest { timeout_s: 0.0, ..req };
    assert!(bad.validate().is_err());
}

#[test]
fn subprocess_round_trips_and_survives_a_crash() {
    let exec = SubprocessExecutor::new(&worker_cmd(), 5.0).unwrap();
    let dir = tempfile::tempdir().unwrap();

    let ok = exec.execute(OK_CODE, &dir.path().join("a")).unwrap();
    assert_eq!(ok.exec_status, ExecStatus::Ok);
    let topo = ok.topo.unwrap();
    assert_eq!((topo.num_solids, topo.num_brep_faces), (1, 12));
    assert_eq!(ok.exports.unwrap().stl, ExportStatus::Ok);

    let err = exec.execute("result = undefined_name", &dir.path().join("b")).unwrap();
    assert_eq!(err.exec_status, ExecStatus::Error);
    assert!(err.error_message.unwrap().contains("NameError"));

    let timeout = exec.execute("# mock: exec=timeout\nresult = 1", &dir.path().join("c")).unwrap();
    assert_eq!(timeout.exec_status, ExecStatus::Timeout);

    assert!(matches!(exec.execute("# mock: crash\nresult = 1", &dir.path().join("d")), Err(ExecutorError::WorkerCrashed)));
    let after = exec.execute(OK_CODE, &dir.path().join("e")).unwrap();
    assert_eq!(after.exec_status, ExecStatus::Ok);
}

#[test]
fn slow_code_times_out_inside_the_worker() {
    let exec = SubprocessExecutor::new(&worker_cmd(), 0.3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let r = exec.execute("# mock: sleep=30\nresult = 1", &dir.path().join("a")).unwrap();
    assert_eq!(r.exec_status, ExecStatus::Timeout);
    assert_eq!(exec.execute(OK_CODE, &dir.path().join("b")).unwrap().exec_status, ExecStatus::Ok);
}

#[test]
fn silent_worker_is_killed_after_the_grace_period() {
    // A worker that never answers.
    let exec = SubprocessExecutor::new("sleep 1000", 0.2).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let started = Instant::now();
    let r = exec.execute("result = 1", dir.path()).unwrap();
    let waited = started.elapsed();
    assert_eq!(r.exec_status, ExecStatus::Timeout);
    assert!(waited >= REPLY_GRACE && waited < REPLY_GRACE + Duration::from_secs(5), "{waited:?}");
}

#[test]
fn worker_that_exits_is_reported_as_crashed() {
    let exec = SubprocessExecutor::new("true", 1.0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(exec.execute("result = 1", dir.path()), Err(ExecutorError::WorkerCrashed)));
}

#[test]
fn missing_worker_binary_fails_to_spawn() {
    let exec = SubprocessExecutor::new("/nonexistent/worker --x", 1.0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(exec.execute("result = 1", dir.path()), Err(ExecutorError::Spawn { .. })));
}
