//! Append-only artifact store on the local filesystem.
//!
//! ```text
//! <root>/manifest.jsonl        one line per committed artifact
//! <root>/outcomes.jsonl        one line per finished task
//! <root>/splits.json           written by `split`
//! <root>/<id>/{code.py, model.stl, model.step, meta.json, conversation.jsonl}
//! <root>/.work/, .staging-*    scratch space, ignored by the integrity scan
//! ```
//!
//! A commit writes everything into a staging directory, renames it into
//! place, then appends the manifest line. A crash at any point leaves
//! either nothing visible or an orphan directory that the scan reports.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use cadsynth_core::gates::Topology;
use cadsynth_core::stats::{DatasetSplits, TaskOutcome};
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::llm::ChatMessage;
use crate::rollout::LedgerEntry;

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const OUTCOMES_FILE: &str = "outcomes.jsonl";
pub const SPLITS_FILE: &str = "splits.json";
pub const ARTIFACT_FILES: [&str; 5] = ["code.py", "model.stl", "model.step", "meta.json", "conversation.jsonl"];

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("artifact `{0}` already exists")]
    DuplicateId(String),
    #[error("invalid artifact id `{0}`")]
    InvalidId(String),
    #[error("staged file missing: {0}")]
    MissingInput(PathBuf),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path} line {line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("injected fault: {0:?}")]
    Injected(CommitFault),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io { path: path.to_path_buf(), source }
}

/// Crash points for fault-injection tests. The commit stops dead at the
/// named point, without cleanup, as a killed process would.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommitFault {
    AfterStaging,
    AfterRename,
}

/// Everything needed to commit one accepted design.
#[derive(Debug, Clone)]
pub struct StagedArtifact {
    pub artifact_id: String,
    pub task_id: String,
    pub category: String,
    pub description: String,
    pub code: String,
    pub stl_path: PathBuf,
    pub step_path: PathBuf,
    pub topo: Topology,
    pub conversation: Vec<ChatMessage>,
    pub ledger: Vec<LedgerEntry>,
}

/// One manifest line. Carries no timestamps so that identical runs
/// produce identical manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub artifact_id: String,
    pub task_id: String,
    pub category: String,
    pub description: String,
    pub code_sha256: String,
    pub num_brep_faces: u32,
    pub num_solids: u32,
    pub volume: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactMeta {
    pub artifact_id: String,
    pub task_id: String,
    pub category: String,
    pub description: String,
    pub topo: Topology,
    /// Seconds since the Unix epoch.
    pub created_at: u64,
    pub code_path: String,
    pub stl_path: String,
    pub step_path: String,
    pub conversation_log_path: String,
    pub tool_ledger: Vec<LedgerEntry>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct IntegrityReport {
    /// Directories with no manifest entry.
    pub orphan_dirs: Vec<String>,
    /// Manifest entries with no directory.
    pub missing_dirs: Vec<String>,
    /// Manifest entries whose directory lacks a required file.
    pub incomplete: Vec<String>,
    pub duplicate_entries: Vec<String>,
}

impl IntegrityReport {
    pub fn is_clean(&self) -> bool {
        self.orphan_dirs.is_empty() && self.missing_dirs.is_empty() && self.incomplete.is_empty() && self.duplicate_entries.is_empty()
    }
}

pub struct Store {
    root: PathBuf,
    commit_lock: Mutex<()>,
    outcome_lock: Mutex<()>,
    staging_seq: AtomicU64,
    fault: Mutex<Option<CommitFault>>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && !id.starts_with('.') && id.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c))
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, StoreError> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_err(path)(e)),
    };
    // A reader racing a writer may see a final line without its newline.
    let complete = match text.rfind('\n') {
        Some(i) => &text[..=i],
        None => "",
    };
    complete
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| StoreError::Parse { path: path.to_path_buf(), line: i + 1, message: e.to_string() }))
        .collect()
}

fn append_line(path: &Path, value: &impl Serialize) -> Result<(), StoreError> {
    let mut line = serde_json::to_string(value).expect("record serializes");
    line.push('\n');
    let mut f = OpenOptions::new().create(true).append(true).open(path).map_err(io_err(path))?;
    f.write_all(line.as_bytes()).map_err(io_err(path))?;
    f.sync_data().map_err(io_err(path))
}

impl Store {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(io_err(&root))?;
        Ok(Self { root, commit_lock: Mutex::new(()), outcome_lock: Mutex::new(()), staging_seq: AtomicU64::new(0), fault: Mutex::new(None) })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Scratch directory for a task's executor output.
    pub fn work_dir(&self, task_id: &str) -> PathBuf {
        self.root.join(".work").join(task_id)
    }

    pub fn artifact_dir(&self, artifact_id: &str) -> PathBuf {
        self.root.join(artifact_id)
    }

    /// Arms a one-shot crash point for the next commit.
    pub fn inject_fault(&self, fault: CommitFault) {
        *self.fault.lock().expect("fault lock") = Some(fault);
    }

    fn fault_at(&self, point: CommitFault) -> Result<(), StoreError> {
        let mut f = self.fault.lock().expect("fault lock");
        if *f == Some(point) {
            *f = None;
            return Err(StoreError::Injected(point));
        }
        Ok(())
    }

    fn stage(&self, a: &StagedArtifact, dir: &Path) -> Result<ArtifactMeta, StoreError> {
        for p in [&a.stl_path, &a.step_path] {
            if !p.is_file() {
                return Err(StoreError::MissingInput(p.clone()));
            }
        }
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let w = |name: &str, bytes: &[u8]| -> Result<(), StoreError> {
            let p = dir.join(name);
            fs::write(&p, bytes).map_err(io_err(&p))
        };
        w("code.py", a.code.as_bytes())?;
        fs::copy(&a.stl_path, dir.join("model.stl")).map_err(io_err(&a.stl_path))?;
        fs::copy(&a.step_path, dir.join("model.step")).map_err(io_err(&a.step_path))?;
        let conv_path = dir.join("conversation.jsonl");
        let mut conv = BufWriter::new(File::create(&conv_path).map_err(io_err(&conv_path))?);
        for m in &a.conversation {
            serde_json::to_writer(&mut conv, m).expect("message serializes");
            conv.write_all(b"\n").map_err(io_err(&conv_path))?;
        }
        conv.flush().map_err(io_err(&conv_path))?;
        let meta = ArtifactMeta {
            artifact_id: a.artifact_id.clone(),
            task_id: a.task_id.clone(),
            category: a.category.clone(),
            description: a.description.clone(),
            topo: a.topo.clone(),
            created_at: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
            code_path: "code.py".into(),
            stl_path: "model.stl".into(),
            step_path: "model.step".into(),
            conversation_log_path: "conversation.jsonl".into(),
            tool_ledger: a.ledger.clone(),
        };
        w("meta.json", serde_json::to_string_pretty(&meta).expect("meta serializes").as_bytes())?;
        Ok(meta)
    }

    /// Atomically adds one artifact. Duplicate ids leave the store untouched.
    pub fn commit_artifact(&self, a: &StagedArtifact) -> Result<String, StoreError> {
        if !valid_id(&a.artifact_id) {
            return Err(StoreError::InvalidId(a.artifact_id.clone()));
        }
        let final_dir = self.artifact_dir(&a.artifact_id);
        if final_dir.exists() {
            return Err(StoreError::DuplicateId(a.artifact_id.clone()));
        }
        let seq = self.staging_seq.fetch_add(1, Ordering::Relaxed);
        let staging = self.root.join(format!(".staging-{}-{}-{seq}", a.artifact_id, std::process::id()));
        if let Err(e) = self.stage(a, &staging) {
            let _ = fs::remove_dir_all(&staging);
            return Err(e);
        }
        self.fault_at(CommitFault::AfterStaging)?;

        let _guard = self.commit_lock.lock().expect("commit lock");
        if final_dir.exists() || self.read_manifest()?.iter().any(|e| e.artifact_id == a.artifact_id) {
            let _ = fs::remove_dir_all(&staging);
            return Err(StoreError::DuplicateId(a.artifact_id.clone()));
        }
        fs::rename(&staging, &final_dir).map_err(io_err(&final_dir))?;
        self.fault_at(CommitFault::AfterRename)?;
        let entry = ManifestEntry {
            artifact_id: a.artifact_id.clone(),
            task_id: a.task_id.clone(),
            category: a.category.clone(),
            description: a.description.clone(),
            code_sha256: sha256_hex(a.code.as_bytes()),
            num_brep_faces: a.topo.num_brep_faces,
            num_solids: a.topo.num_solids,
            volume: a.topo.volume,
        };
        append_line(&self.root.join(MANIFEST_FILE), &entry)?;
        Ok(a.artifact_id.clone())
    }

    pub fn read_manifest(&self) -> Result<Vec<ManifestEntry>, StoreError> {
        read_jsonl(&self.root.join(MANIFEST_FILE))
    }

    pub fn append_outcome(&self, outcome: &TaskOutcome) -> Result<(), StoreError> {
        let _guard = self.outcome_lock.lock().expect("outcome lock");
        append_line(&self.root.join(OUTCOMES_FILE), outcome)
    }

    pub fn read_outcomes(&self) -> Result<Vec<TaskOutcome>, StoreError> {
        read_jsonl(&self.root.join(OUTCOMES_FILE))
    }

    pub fn write_splits(&self, splits: &DatasetSplits) -> Result<PathBuf, StoreError> {
        let path = self.root.join(SPLITS_FILE);
        let text = serde_json::to_string_pretty(splits).expect("splits serialize");
        fs::write(&path, text).map_err(io_err(&path))?;
        Ok(path)
    }

    pub fn read_meta(&self, artifact_id: &str) -> Result<ArtifactMeta, StoreError> {
        let path = self.artifact_dir(artifact_id).join("meta.json");
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        serde_json::from_str(&text).map_err(|e| StoreError::Parse { path, line: 1, message: e.to_string() })
    }

    /// Checks the manifest against artifact directories, one to one.
    pub fn scan_integrity(&self) -> Result<IntegrityReport, StoreError> {
        let mut report = IntegrityReport::default();
        let mut listed = BTreeMap::new();
        for e in self.read_manifest()? {
            if listed.insert(e.artifact_id.clone(), ()).is_some() {
                report.duplicate_entries.push(e.artifact_id);
            }
        }
        let mut dirs = BTreeSet::new();
        for entry in fs::read_dir(&self.root).map_err(io_err(&self.root))? {
            let entry = entry.map_err(io_err(&self.root))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if entry.path().is_dir() && !name.starts_with('.') {
                dirs.insert(name);
            }
        }
        for d in &dirs {
            if !listed.contains_key(d) {
                report.orphan_dirs.push(d.clone());
            }
        }
        for id in listed.keys() {
            if !dirs.contains(id) {
                report.missing_dirs.push(id.clone());
            } else if ARTIFACT_FILES.iter().any(|f| !self.artifact_dir(id).join(f).is_file()) {
                report.incomplete.push(id.clone());
            }
        }
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use cadsynth_core::shapes::axis_box;

    fn staged(dir: &Path, id: &str) -> StagedArtifact {
        let stl = dir.join(format!("{id}.stl"));
        crate::stl::write_stl(&stl, &axis_box([0.0; 3], [1.0; 3])).unwrap();
        let step = dir.join(format!("{id}.step"));
        fs::write(&step, "ISO-10303-21;").unwrap();
        StagedArtifact {
            artifact_id: id.into(),
            task_id: id.into(),
            category: "Bracket".into(),
            description: "a bracket".into(),
            code: "result = 1\n".into(),
            stl_path: stl,
            step_path: step,
            topo: Topology { num_brep_faces: 12, num_solids: 1, volume: 1.0, bbox: [0.0, 0.0, 0.0, 1.0, 1.0, 1.0] },
            conversation: vec![ChatMessage::system("s"), ChatMessage::user("u")],
            ledger: vec![],
        }
    }

    #[test]
    fn commit_lays_out_five_files_and_one_line() {
        let tmp = tempfile::tempdir().unwrap();
        let store = Store::open(tmp.path().join("store")).unwrap();
        store.commit_artifact(&staged(tmp.path(), "a1")).unwrap();
        for f in ARTIFACT_FILES {
            assert!(store.artifact_dir("a1").join(f).is_file(), "{f}");
        }
        assert_eq!(store.read_manifest().unwrap().len(), 1);
        assert!(store.scan_integrity().unwrap().is_clean());
        assert_eq!(store.read_meta("a1").unwrap().topo.num_brep_faces, 12);
    }

    #[test]
    fn duplicate_commit_leaves_store_unchanged() {
        let tmp = tempfile::tempdir().unwrap();
        let store = Store::open(tmp.path().join("store")).unwrap();
        let a = staged(tmp.path(), "a1");
        store.commit_artifact(&a).unwrap();
        let before = fs::read(store.root().join(MANIFEST_FILE)).unwrap();
        assert!(matches!(store.commit_artifact(&a), Err(StoreError::DuplicateId(_))));
        assert_eq!(fs::read(store.root().join(MANIFEST_FILE)).unwrap(), before);
        assert!(store.scan_integrity().unwrap().is_clean());
    }

    #[test]
    fn crash_after_rename_leaves_flagged_orphan() {
        let tmp = tempfile::tempdir().unwrap();
        let store = Store::open(tmp.path().join("store")).unwrap();
        store.inject_fault(CommitFault::AfterRename);
        assert!(store.commit_artifact(&staged(tmp.path(), "a1")).is_err());
        assert!(store.read_manifest().unwrap().is_empty());
        assert_eq!(store.scan_integrity().unwrap().orphan_dirs, vec!["a1".to_string()]);
    }

    #[test]
    fn crash_after_staging_is_invisible() {
        let tmp = tempfile::tempdir().unwrap();
        let store = Store::open(tmp.path().join("store")).unwrap();
        store.inject_fault(CommitFault::AfterStaging);
        assert!(store.commit_artifact(&staged(tmp.path(), "a1")).is_err());
        assert!(store.scan_integrity().unwrap().is_clean());
        store.commit_artifact(&staged(tmp.path(), "a1")).unwrap();
        assert!(store.scan_integrity().unwrap().is_clean());
    }

    #[test]
    fn missing_inputs_and_bad_ids_are_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        let store = Store::open(tmp.path().join("store")).unwrap();
        let mut a = staged(tmp.path(), "a1");
        a.stl_path = tmp.path().join("nope.stl");
        assert!(matches!(store.commit_artifact(&a), Err(StoreError::MissingInput(_))));
        a.artifact_id = "../x".into();
        assert!(matches!(store.commit_artifact(&a), Err(StoreError::InvalidId(_))));
        assert!(store.scan_integrity().unwrap().is_clean());
    }

    #[test]
    fn partial_trailing_line_is_ignored() {
        let tmp = tempfile::tempdir().unwrap();
        let store = Store::open(tmp.path().join("store")).unwrap();
        store.commit_artifact(&staged(tmp.path(), "a1")).unwrap();
        let mut f = OpenOptions::new().append(true).open(store.root().join(MANIFEST_FILE)).unwrap();
        f.write_all(b"{\"artifact_id\":\"a2\"").unwrap();
        assert_eq!(store.read_manifest().unwrap().len(), 1);
    }
}
