//! Client side of the executor protocol, plus an in-process mock worker.
//!
//! The worker is a persistent child process speaking newline-delimited JSON:
//! one [`ExecRequest`] per stdin line, one [`ExecResponse`] per stdout line,
//! one request in flight. The field layout is pinned by
//! `contracts/exec_protocol.schema.json`.

use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use cadsynth_core::gates::{ArtifactPaths, ExecStatus, ExportStatus, Exports, Topology, ValidationReport};
use cadsynth_core::mesh::TriMesh;
use cadsynth_core::shapes::axis_box;
use log::{debug, warn};
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_TIMEOUT_S: f64 = 60.0;
pub const MAX_TIMEOUT_S: f64 = 600.0;
/// Time between SIGTERM and SIGKILL.
pub const KILL_GRACE: Duration = Duration::from_secs(2);
/// Extra time the client waits past the request timeout before declaring
/// the worker hung.
pub const REPLY_GRACE: Duration = Duration::from_secs(5);

pub const STL_FILE: &str = "model.stl";
pub const STEP_FILE: &str = "model.step";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecRequest {
    pub request_id: String,
    pub code: String,
    pub timeout_s: f64,
    pub out_dir: String,
}

impl ExecRequest {
    pub fn validate(&self) -> Result<(), ExecutorError> {
        if self.code.trim().is_empty() {
            return Err(ExecutorError::InvalidRequest("code is empty".into()));
        }
        if !(self.timeout_s > 0.0 && self.timeout_s <= MAX_TIMEOUT_S) {
            return Err(ExecutorError::InvalidRequest(format!("timeout_s must be in (0, {MAX_TIMEOUT_S}]")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecResponse {
    pub request_id: String,
    pub wall_time_s: f64,
    #[serde(flatten)]
    pub report: ValidationReport,
}

/// Infrastructure failures. These never describe the submitted code.
#[derive(Debug, Error)]
pub enum ExecutorError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("failed to start worker `{cmd}`: {source}")]
    Spawn { cmd: String, source: std::io::Error },
    #[error("worker exited unexpectedly")]
    WorkerCrashed,
    #[error("worker protocol violation: {0}")]
    Protocol(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub trait Executor: Send + Sync {
    /// Runs `code`, writing exports into `out_dir`.
    fn execute(&self, code: &str, out_dir: &Path) -> Result<ValidationReport, ExecutorError>;
}

fn check_response(resp: ExecResponse, request_id: &str) -> Result<ValidationReport, ExecutorError> {
    if resp.request_id != request_id {
        return Err(ExecutorError::Protocol(format!("expected reply to {request_id}, got {}", resp.request_id)));
    }
    resp.report.check_invariants().map_err(|e| ExecutorError::Protocol(e.to_string()))?;
    Ok(resp.report)
}

struct WorkerProc {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
}

impl WorkerProc {
    fn spawn(argv: &[String]) -> Result<Self, ExecutorError> {
        let mut child = Command::new(&argv[0])
            .args(&argv[1..])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|source| ExecutorError::Spawn { cmd: argv.join(" "), source })?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, lines) = mpsc::channel();
        std::thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(Self { child, stdin, lines })
    }

    /// SIGTERM, then SIGKILL once the grace period runs out.
    fn terminate(mut self) {
        let pid = self.child.id() as libc::pid_t;
        // SAFETY: plain signal delivery to our own child.
        unsafe {
            libc::kill(pid, libc::SIGTERM);
        }
        let deadline = Instant::now() + KILL_GRACE;
        while Instant::now() < deadline {
            if let Ok(Some(_)) = self.child.try_wait() {
                return;
            }
            std::thread::sleep(Duration::from_millis(20));
        }
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Drives one external worker process, restarting it after crashes.
pub struct SubprocessExecutor {
    argv: Vec<String>,
    timeout_s: f64,
    worker: Mutex<Option<WorkerProc>>,
    next_id: AtomicU64,
}

impl SubprocessExecutor {
    /// `cmd` is split on whitespace into program and arguments.
    pub fn new(cmd: &str, timeout_s: f64) -> Result<Self, ExecutorError> {
        let argv: Vec<String> = cmd.split_whitespace().map(str::to_string).collect();
        if argv.is_empty() {
            return Err(ExecutorError::InvalidRequest("empty worker command".into()));
        }
        Ok(Self { argv, timeout_s, worker: Mutex::new(None), next_id: AtomicU64::new(1) })
    }

    fn roundtrip(&self, slot: &mut Option<WorkerProc>, req: &ExecRequest) -> Result<ValidationReport, ExecutorError> {
        if slot.is_none() {
            *slot = Some(WorkerProc::spawn(&self.argv)?);
        }
        let w = slot.as_mut().expect("worker present");
        let mut line = serde_json::to_string(req).expect("request serializes");
        line.push('\n');
        if w.stdin.write_all(line.as_bytes()).and_then(|_| w.stdin.flush()).is_err() {
            slot.take().expect("worker present").terminate();
            return Err(ExecutorError::WorkerCrashed);
        }
        let wait = Duration::from_secs_f64(req.timeout_s) + REPLY_GRACE;
        match w.lines.recv_timeout(wait) {
            Ok(Ok(text)) => {
                let resp: ExecResponse = serde_json::from_str(&text).map_err(|e| {
                    slot.take().expect("worker present").terminate();
                    ExecutorError::Protocol(format!("{e}: {text}"))
                })?;
                check_response(resp, &req.request_id)
            }
            Ok(Err(e)) => {
                slot.take().expect("worker present").terminate();
                Err(e.into())
            }
            Err(RecvTimeoutError::Disconnected) => {
                slot.take().expect("worker present").terminate();
                Err(ExecutorError::WorkerCrashed)
            }
            Err(RecvTimeoutError::Timeout) => {
                warn!("worker did not answer {} within {:?}; killing it", req.request_id, wait);
                slot.take().expect("worker present").terminate();
                Ok(ValidationReport::failed(ExecStatus::Timeout, format!("execution exceeded {} s", req.timeout_s), None))
            }
        }
    }
}

impl Executor for SubprocessExecutor {
    fn execute(&self, code: &str, out_dir: &Path) -> Result<ValidationReport, ExecutorError> {
        let req = ExecRequest {
            request_id: format!("req-{}", self.next_id.fetch_add(1, Ordering::Relaxed)),
            code: code.to_string(),
            timeout_s: self.timeout_s,
            out_dir: out_dir.display().to_string(),
        };
        req.validate()?;
        std::fs::create_dir_all(out_dir)?;
        let mut slot = self.worker.lock().expect("worker lock");
        self.roundtrip(&mut slot, &req)
    }
}

impl Drop for SubprocessExecutor {
    fn drop(&mut self) {
        if let Some(w) = self.worker.get_mut().ok().and_then(Option::take) {
            drop(w.stdin);
            let mut child = w.child;
            let deadline = Instant::now() + KILL_GRACE;
            while Instant::now() < deadline {
                if let Ok(Some(_)) = child.try_wait() {
                    return;
                }
                std::thread::sleep(Duration::from_millis(10));
            }
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

/// Behavior requested by `# mock: ...` comment lines in submitted code.
#[derive(Debug, Clone, PartialEq)]
pub struct MockDirectives {
    pub exec: ExecStatus,
    pub faces: u32,
    pub solids: u32,
    pub volume: f64,
    pub stl_export_error: bool,
    pub step_export_error: bool,
    pub open_mesh: bool,
    pub skip_stl_file: bool,
    pub crash: bool,
    pub sleep_s: f64,
}

impl Default for MockDirectives {
    fn default() -> Self {
        Self {
            exec: ExecStatus::Ok,
            faces: 12,
            solids: 1,
            volume: 1000.0,
            stl_export_error: false,
            step_export_error: false,
            open_mesh: false,
            skip_stl_file: false,
            crash: false,
            sleep_s: 0.0,
        }
    }
}

impl MockDirectives {
    pub fn parse(code: &str) -> Self {
        let mut d = Self::default();
        for line in code.lines() {
            let Some(rest) = line.trim().strip_prefix("# mock:") else { continue };
            for tok in rest.split_whitespace() {
                let (k, v) = tok.split_once('=').unwrap_or((tok, ""));
                match (k, v) {
                    ("exec", "error") => d.exec = ExecStatus::Error,
                    ("exec", "timeout") => d.exec = ExecStatus::Timeout,
                    ("faces", n) => d.faces = n.parse().unwrap_or(d.faces),
                    ("solids", n) => d.solids = n.parse().unwrap_or(d.solids),
                    ("volume", x) => d.volume = x.parse().unwrap_or(d.volume),
                    ("stl_export", "error") => d.stl_export_error = true,
                    ("step_export", "error") => d.step_export_error = true,
                    ("open_mesh", _) => d.open_mesh = true,
                    ("no_stl_file", _) => d.skip_stl_file = true,
                    ("crash", _) => d.crash = true,
                    ("sleep", x) => d.sleep_s = x.parse().unwrap_or(0.0),
                    _ => debug!("ignoring mock directive `{tok}`"),
                }
            }
        }
        d
    }
}

fn mock_mesh(d: &MockDirectives) -> TriMesh {
    let mut mesh = axis_box([0.0; 3], [10.0; 3]);
    for i in 1..d.solids.max(1) {
        let off = 20.0 * i as f64;
        mesh = mesh.merged(&axis_box([off, 0.0, 0.0], [off + 10.0, 10.0, 10.0]));
    }
    if d.open_mesh {
        let tris = mesh.triangles()[1..].to_vec();
        mesh = TriMesh::new(mesh.vertices().to_vec(), tris).expect("subset of a valid mesh");
    }
    mesh
}

const STEP_STUB: &str = "ISO-10303-21;\nHEADER;\nFILE_DESCRIPTION(('mock export'),'2;1');\nENDSEC;\nDATA;\nENDSEC;\nEND-ISO-10303-21;\n";

/// Outcome of one mock run: a report, or a request to die.
#[allow(clippy::large_enum_variant)]
pub enum MockRun {
    Report(ValidationReport),
    Crash,
}

/// Executes nothing; the report is derived from `# mock:` directives so that
/// replay scripts can steer every gate. Code must assign `result`.
pub fn mock_execute(code: &str, out_dir: &Path, timeout_s: f64) -> std::io::Result<MockRun> {
    let d = MockDirectives::parse(code);
    if d.crash {
        return Ok(MockRun::Crash);
    }
    if d.sleep_s > 0.0 {
        if d.sleep_s > timeout_s {
            std::thread::sleep(Duration::from_secs_f64(timeout_s));
            return Ok(MockRun::Report(ValidationReport::failed(ExecStatus::Timeout, format!("execution exceeded {timeout_s} s"), None)));
        }
        std::thread::sleep(Duration::from_secs_f64(d.sleep_s));
    }
    let result_assigned = Regex::new(r"(?m)^\s*result\s*=").expect("static regex");
    if d.exec == ExecStatus::Timeout {
        return Ok(MockRun::Report(ValidationReport::failed(ExecStatus::Timeout, format!("execution exceeded {timeout_s} s"), None)));
    }
    if code.contains("undefined_name") {
        let tb = "Traceback (most recent call last):\n  File \"<candidate>\", line 1, in <module>\nNameError: name 'undefined_name' is not defined";
        return Ok(MockRun::Report(ValidationReport::failed(ExecStatus::Error, "NameError: name 'undefined_name' is not defined", Some(tb.into()))));
    }
    if d.exec == ExecStatus::Error {
        return Ok(MockRun::Report(ValidationReport::failed(ExecStatus::Error, "ValueError: mock failure", Some("Traceback (most recent call last):\nValueError: mock failure".into()))));
    }
    if !result_assigned.is_match(code) {
        return Ok(MockRun::Report(ValidationReport::failed(ExecStatus::Error, "no result variable", None)));
    }

    std::fs::create_dir_all(out_dir)?;
    let stl_path = out_dir.join(STL_FILE);
    let step_path = out_dir.join(STEP_FILE);
    let mesh = mock_mesh(&d);
    let stl = if d.stl_export_error {
        ExportStatus::Error("StdFail_NotDone: mesh export failed".into())
    } else {
        if !d.skip_stl_file {
            crate::stl::write_stl(&stl_path, &mesh)?;
        }
        ExportStatus::Ok
    };
    let step = if d.step_export_error {
        ExportStatus::Error("STEP writer returned failure".into())
    } else {
        std::fs::write(&step_path, STEP_STUB)?;
        ExportStatus::Ok
    };
    let (lo, hi) = mesh.bounds().unwrap_or(([0.0; 3], [0.0; 3]));
    Ok(MockRun::Report(ValidationReport {
        exec_status: ExecStatus::Ok,
        error_message: None,
        traceback: None,
        topo: Some(Topology { num_brep_faces: d.faces, num_solids: d.solids, volume: d.volume, bbox: [lo[0], lo[1], lo[2], hi[0], hi[1], hi[2]] }),
        exports: Some(Exports { stl, step }),
        artifact_paths: Some(ArtifactPaths { stl: stl_path.display().to_string(), step: step_path.display().to_string() }),
    }))
}

/// In-process stand-in for the worker.
pub struct MockExecutor {
    pub timeout_s: f64,
}

impl Default for MockExecutor {
    fn default() -> Self {
        Self { timeout_s: DEFAULT_TIMEOUT_S }
    }
}

impl Executor for MockExecutor {
    fn execute(&self, code: &str, out_dir: &Path) -> Result<ValidationReport, ExecutorError> {
        match mock_execute(code, out_dir, self.timeout_s)? {
            MockRun::Report(r) => Ok(r),
            MockRun::Crash => Err(ExecutorError::WorkerCrashed),
        }
    }
}

/// Serves the protocol with the mock backend until stdin closes.
/// A `crash` directive exits the process without replying.
pub fn serve_mock_worker(input: impl BufRead, mut output: impl Write) -> std::io::Result<()> {
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let started = Instant::now();
        let req: ExecRequest = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(e) => {
                warn!("malformed request: {e}");
                continue;
            }
        };
        let report = match req.validate() {
            Err(e) => ValidationReport::failed(ExecStatus::Error, e.to_string(), None),
            Ok(()) => match mock_execute(&req.code, &PathBuf::from(&req.out_dir), req.timeout_s)? {
                MockRun::Report(r) => r,
                MockRun::Crash => std::process::exit(139),
            },
        };
        let resp = ExecResponse { request_id: req.request_id, wall_time_s: started.elapsed().as_secs_f64(), report };
        serde_json::to_writer(&mut output, &resp)?;
        output.write_all(b"\n")?;
        output.flush()?;
    }
    Ok(())
}

/// Builds the executor named by a config's `worker_cmd`.
pub fn executor_from_command(cmd: &str, timeout_s: f64) -> Result<Box<dyn Executor>, ExecutorError> {
    if cmd.trim() == "builtin:mock" {
        Ok(Box::new(MockExecutor { timeout_s }))
    } else {
        Ok(Box::new(SubprocessExecutor::new(cmd, timeout_s)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use cadsynth_core::gates::{evaluate_report, GeometryGates, MeshEvidence};

    fn run(code: &str) -> (ValidationReport, tempfile::TempDir) {
        let dir = tempfile::tempdir().unwrap();
        let r = MockExecutor::default().execute(code, dir.path()).unwrap();
        (r, dir)
    }

    #[test]
    fn default_mock_passes_gates() {
        let (r, dir) = run("result = make_part()");
        let mesh = crate::stl::read_stl(&dir.path().join(STL_FILE)).unwrap();
        let v = evaluate_report(&r, &GeometryGates::default(), MeshEvidence::Mesh(&mesh));
        assert!(v.passed, "{:?}", v.codes());
        assert!(dir.path().join(STEP_FILE).exists());
    }

    #[test]
    fn name_error_carries_traceback() {
        let (r, _d) = run("result = undefined_name");
        assert_eq!(r.exec_status, ExecStatus::Error);
        assert!(r.traceback.unwrap().contains("NameError"));
    }

    #[test]
    fn missing_result_variable() {
        let (r, _d) = run("part = 1");
        assert_eq!(r.error_message.as_deref(), Some("no result variable"));
    }

    #[test]
    fn directives_parse() {
        let d = MockDirectives::parse("# mock: faces=6 solids=2 volume=0 stl_export=error open_mesh\nresult = 1");
        assert_eq!((d.faces, d.solids, d.volume), (6, 2, 0.0));
        assert!(d.stl_export_error && d.open_mesh);
    }

    #[test]
    fn request_validation() {
        let mut r = ExecRequest { request_id: "a".into(), code: "x".into(), timeout_s: 60.0, out_dir: ".".into() };
        assert!(r.validate().is_ok());
        r.timeout_s = 601.0;
        assert!(r.validate().is_err());
        r.timeout_s = 1.0;
        r.code = "  ".into();
        assert!(r.validate().is_err());
    }

    #[test]
    fn serve_loop_answers_each_line() {
        let dir = tempfile::tempdir().unwrap();
        let mk = |id: &str, code: &str| {
            serde_json::to_string(&ExecRequest { request_id: id.into(), code: code.into(), timeout_s: 5.0, out_dir: dir.path().display().to_string() }).unwrap()
        };
        let input = format!("{}\n\n{}\n", mk("r1", "result = 1"), mk("r2", "result = undefined_name"));
        let mut out = Vec::new();
        serve_mock_worker(input.as_bytes(), &mut out).unwrap();
        let lines: Vec<ExecResponse> = String::from_utf8(out).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0].request_id, "r1");
        assert_eq!(lines[0].report.exec_status, ExecStatus::Ok);
        assert_eq!(lines[1].report.exec_status, ExecStatus::Error);
    }
}
