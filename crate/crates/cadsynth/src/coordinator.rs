//! Pipeline entry point: configuration, endpoint selection and the worker
//! pool that runs rollouts and streams results into the store.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use cadsynth_core::gates::GeometryGates;
use cadsynth_core::stats::{compute_generation_stats, GenerationStats, TaskOutcome, TaskStatus};
use log::{error, info, warn};
use serde::{Deserialize, Serialize};

use crate::catalog::{read_catalog, Taxonomy, DEFAULT_BATCH_SIZE};
use crate::docs::DocIndex;
use crate::executor::{executor_from_command, Executor, DEFAULT_TIMEOUT_S, MAX_TIMEOUT_S};
use crate::llm::{load_replay_script, ChatBackend, ChatRequest, ChatResponse, HttpBackend, LlmError, SamplingParams};
use crate::rollout::{run_design_task, Caps, DesignTask, RolloutError, RolloutSettings, ATTEMPT_BUDGET};
use crate::store::{StagedArtifact, Store};
use crate::tools::ToolRegistry;

pub const QUARANTINE_AFTER: u32 = 3;
pub const QUARANTINE_COOLDOWN: Duration = Duration::from_secs(30);
pub const DEFAULT_TASK_RETRIES: u32 = 2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EndpointConfig {
    /// Base URL of an OpenAI-compatible server, or `replay:<script.jsonl>`.
    pub url: String,
    #[serde(default)]
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptPaths {
    pub catalog: Option<PathBuf>,
    pub codegen: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryConfig {
    pub max_task_retries: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CatalogConfig {
    pub taxonomy: Option<PathBuf>,
    pub batch_size: usize,
    pub near_duplicates: bool,
}

impl Default for CatalogConfig {
    fn default() -> Self {
        Self { taxonomy: None, batch_size: DEFAULT_BATCH_SIZE, near_duplicates: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub endpoints: Vec<EndpointConfig>,
    #[serde(default = "one")]
    pub max_concurrency: usize,
    pub task_source: PathBuf,
    #[serde(default = "no_prompts")]
    pub prompt_paths: PromptPaths,
    #[serde(default = "mock_cmd")]
    pub worker_cmd: String,
    #[serde(default = "default_timeout")]
    pub executor_timeout_s: f64,
    pub store_root: PathBuf,
    #[serde(default)]
    pub caps: Caps,
    #[serde(default = "default_retry")]
    pub retry: RetryConfig,
    /// Directory of `<doc_id>.txt` files; the bundled excerpt when absent.
    #[serde(default)]
    pub docs_dir: Option<PathBuf>,
    #[serde(default)]
    pub sampling: SamplingParams,
    /// Base for per-task sampling seeds.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub gates: GeometryGates,
    #[serde(default)]
    pub catalog: CatalogConfig,
    #[serde(default = "default_budget")]
    pub attempt_budget_s: f64,
}

fn one() -> usize {
    1
}
fn no_prompts() -> PromptPaths {
    PromptPaths { catalog: None, codegen: None }
}
fn mock_cmd() -> String {
    "builtin:mock".into()
}
fn default_timeout() -> f64 {
    DEFAULT_TIMEOUT_S
}
fn default_retry() -> RetryConfig {
    RetryConfig { max_task_retries: DEFAULT_TASK_RETRIES }
}
fn default_budget() -> f64 {
    ATTEMPT_BUDGET.as_secs_f64()
}

impl PipelineConfig {
    /// Reads a JSON config; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: PipelineConfig = serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.task_source);
        fix(&mut self.store_root);
        for p in [&mut self.prompt_paths.catalog, &mut self.prompt_paths.codegen, &mut self.docs_dir, &mut self.catalog.taxonomy].into_iter().flatten() {
            fix(p);
        }
        for e in &mut self.endpoints {
            if let Some(script) = e.url.strip_prefix("replay:") {
                let p = Path::new(script);
                if p.is_relative() {
                    e.url = format!("replay:{}", base.join(p).display());
                }
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.endpoints.is_empty() {
            bail!("at least one endpoint is required");
        }
        if self.max_concurrency == 0 {
            bail!("max_concurrency must be at least 1");
        }
        if self.caps.max_turns_per_attempt == 0 || self.caps.max_attempts_per_task == 0 {
            bail!("caps must be at least 1");
        }
        if !(self.executor_timeout_s > 0.0 && self.executor_timeout_s <= MAX_TIMEOUT_S) {
            bail!("executor_timeout_s must be in (0, {MAX_TIMEOUT_S}]");
        }
        if !(self.attempt_budget_s > 0.0) {
            bail!("attempt_budget_s must be positive");
        }
        self.gates.validate()?;
        Ok(())
    }

    pub fn codegen_prompt(&self) -> Result<String> {
        match &self.prompt_paths.codegen {
            Some(p) => std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display())),
            None => Ok(crate::prompts::CODEGEN_PROMPT.to_string()),
        }
    }

    pub fn catalog_prompt(&self) -> Result<String> {
        match &self.prompt_paths.catalog {
            Some(p) => std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display())),
            None => Ok(crate::prompts::CATALOG_PROMPT.to_string()),
        }
    }

    pub fn doc_index(&self) -> Result<DocIndex> {
        match &self.docs_dir {
            Some(d) => DocIndex::load(d),
            None => DocIndex::new(crate::prompts::builtin_corpus()),
        }
    }

    pub fn taxonomy(&self) -> Result<Taxonomy> {
        match &self.catalog.taxonomy {
            Some(p) => Taxonomy::load(p),
            None => {
                let t: Taxonomy = serde_json::from_str(include_str!("../data/taxonomy.json"))?;
                t.validate()?;
                Ok(t)
            }
        }
    }

    /// Builds the endpoint selector. Replay endpoints naming the same script
    /// share one cursor.
    pub fn backend(&self) -> Result<EndpointSelector> {
        let mut replays: BTreeMap<String, Arc<dyn ChatBackend>> = BTreeMap::new();
        let mut backends: Vec<(String, Arc<dyn ChatBackend>)> = Vec::new();
        for e in &self.endpoints {
            let b: Arc<dyn ChatBackend> = if let Some(script) = e.url.strip_prefix("replay:") {
                match replays.get(script) {
                    Some(b) => b.clone(),
                    None => {
                        let b: Arc<dyn ChatBackend> = Arc::new(load_replay_script(script)?);
                        replays.insert(script.to_string(), b.clone());
                        b
                    }
                }
            } else {
                let key = match &e.api_key_env {
                    Some(var) => Some(std::env::var(var).with_context(|| format!("endpoint {} needs ${var}", e.url))?),
                    None => None,
                };
                Arc::new(HttpBackend::new(&e.url, &e.model, key))
            };
            backends.push((e.url.clone(), b));
        }
        Ok(EndpointSelector::new(backends))
    }
}

type Clock = Arc<dyn Fn() -> Instant + Send + Sync>;

struct SelectorState {
    next: usize,
    failures: Vec<u32>,
    quarantined_until: Vec<Option<Instant>>,
}

/// Round-robin over healthy endpoints. Three consecutive retryable failures
/// quarantine an endpoint for the cooldown; it is then tried again.
pub struct EndpointSelector {
    endpoints: Vec<(String, Arc<dyn ChatBackend>)>,
    state: Mutex<SelectorState>,
    clock: Clock,
}

impl EndpointSelector {
    pub fn new(endpoints: Vec<(String, Arc<dyn ChatBackend>)>) -> Self {
        let n = endpoints.len();
        Self {
            endpoints,
            state: Mutex::new(SelectorState { next: 0, failures: vec![0; n], quarantined_until: vec![None; n] }),
            clock: Arc::new(Instant::now),
        }
    }

    pub fn with_clock(mut self, clock: impl Fn() -> Instant + Send + Sync + 'static) -> Self {
        self.clock = Arc::new(clock);
        self
    }

    pub fn name(&self, i: usize) -> &str {
        &self.endpoints[i].0
    }

    pub fn next_endpoint(&self) -> Result<usize, LlmError> {
        let now = (self.clock)();
        let mut s = self.state.lock().expect("selector lock");
        let n = self.endpoints.len();
        for step in 0..n {
            let i = (s.next + step) % n;
            match s.quarantined_until[i] {
                Some(until) if now < until => continue,
                Some(_) => {
                    info!("endpoint {} leaves quarantine", self.endpoints[i].0);
                    s.quarantined_until[i] = None;
                    s.failures[i] = 0;
                }
                None => {}
            }
            s.next = (i + 1) % n;
            return Ok(i);
        }
        Err(LlmError::NoEndpoint)
    }

    pub fn record(&self, i: usize, healthy: bool) {
        let mut s = self.state.lock().expect("selector lock");
        if healthy {
            s.failures[i] = 0;
            return;
        }
        s.failures[i] += 1;
        if s.failures[i] >= QUARANTINE_AFTER && s.quarantined_until[i].is_none() {
            warn!("endpoint {} quarantined after {} consecutive failures", self.endpoints[i].0, s.failures[i]);
            s.quarantined_until[i] = Some((self.clock)() + QUARANTINE_COOLDOWN);
        }
    }

    pub fn is_quarantined(&self, i: usize) -> bool {
        let now = (self.clock)();
        self.state.lock().expect("selector lock").quarantined_until[i].is_some_and(|u| now < u)
    }
}

impl ChatBackend for EndpointSelector {
    /// Tries each endpoint at most once per call.
    fn chat_complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let mut last = LlmError::NoEndpoint;
        for _ in 0..self.endpoints.len() {
            let i = self.next_endpoint()?;
            match self.endpoints[i].1.chat_complete(request) {
                Ok(r) => {
                    self.record(i, true);
                    return Ok(r);
                }
                Err(e) if e.is_retryable() => {
                    self.record(i, false);
                    last = e;
                }
                Err(e) => {
                    self.record(i, true);
                    return Err(e);
                }
            }
        }
        Err(last)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct PipelineSummary {
    pub n_tasks: usize,
    pub accepted: usize,
    pub exhausted: usize,
    pub aborted: usize,
    pub stats: GenerationStats,
}

/// Turns catalog entries into tasks, attaching category reference snippets.
pub fn load_tasks(cfg: &PipelineConfig) -> Result<Vec<DesignTask>> {
    let descriptions = read_catalog(&cfg.task_source)?;
    let taxonomy = match &cfg.catalog.taxonomy {
        Some(_) => Some(cfg.taxonomy()?),
        None => None,
    };
    let mut seen = BTreeSet::new();
    let mut tasks = Vec::with_capacity(descriptions.len());
    for d in descriptions {
        if !seen.insert(d.id.clone()) {
            bail!("duplicate task id `{}` in {}", d.id, cfg.task_source.display());
        }
        let reference_snippet = taxonomy.as_ref().and_then(|t| t.get(&d.category)).and_then(|c| c.reference_snippet.clone());
        tasks.push(DesignTask { task_id: d.id.clone(), description: d, reference_snippet });
    }
    Ok(tasks)
}

struct Worker<'a> {
    llm: &'a dyn ChatBackend,
    tools: ToolRegistry,
    settings: RolloutSettings,
    store: &'a Store,
    max_task_retries: u32,
    base_seed: Option<u64>,
}

impl Worker<'_> {
    fn run(&self, index: usize, task: &DesignTask) -> TaskOutcome {
        let mut settings = self.settings.clone();
        settings.sampling.seed = self.base_seed.map(|s| s.wrapping_add(index as u64)).or(settings.sampling.seed);
        let work = self.store.work_dir(&task.task_id);
        let mut last_error = String::new();
        for retry in 0..=self.max_task_retries {
            if retry > 0 {
                warn!("{}: retry {retry} after: {last_error}", task.task_id);
            }
            let _ = std::fs::remove_dir_all(&work);
            let result = match run_design_task(task, self.llm, &self.tools, &settings, &work) {
                Ok(r) => r,
                Err(RolloutError::Llm(e)) => {
                    last_error = e.to_string();
                    continue;
                }
            };
            let Some(exec) = &result.accepted else {
                let _ = std::fs::remove_dir_all(&work);
                return result.outcome;
            };
            let topo = exec.report.topo.clone().expect("accepted reports carry topology");
            let paths = exec.report.artifact_paths.clone().expect("accepted reports carry artifact paths");
            let staged = StagedArtifact {
                artifact_id: result.outcome.artifact_id.clone().expect("accepted outcome has an id"),
                task_id: task.task_id.clone(),
                category: task.description.category.clone(),
                description: task.description.text.clone(),
                code: exec.code.clone(),
                stl_path: paths.stl.into(),
                step_path: paths.step.into(),
                topo,
                conversation: result.transcript.clone(),
                ledger: result.ledger.clone(),
            };
            match self.store.commit_artifact(&staged) {
                Ok(_) => {
                    let _ = std::fs::remove_dir_all(&work);
                    return result.outcome;
                }
                Err(e @ crate::store::StoreError::DuplicateId(_)) => {
                    last_error = e.to_string();
                    break;
                }
                Err(e) => last_error = format!("commit failed: {e}"),
            }
        }
        let _ = std::fs::remove_dir_all(&work);
        error!("{}: aborted: {last_error}", task.task_id);
        TaskOutcome::aborted(&task.task_id, last_error)
    }
}

/// Runs every task with up to `max_concurrency` rollouts in flight and
/// streams each outcome to the store as it finishes.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineSummary> {
    let tasks = load_tasks(cfg)?;
    let llm = cfg.backend()?;
    run_pipeline_with(cfg, &tasks, &llm)
}

/// [`run_pipeline`] with tasks and model backend supplied by the caller.
pub fn run_pipeline_with(cfg: &PipelineConfig, tasks: &[DesignTask], llm: &dyn ChatBackend) -> Result<PipelineSummary> {
    cfg.validate()?;
    let store = Store::open(&cfg.store_root)?;
    let docs = Arc::new(cfg.doc_index()?);
    let mut settings = RolloutSettings::new(cfg.codegen_prompt()?);
    settings.caps = cfg.caps;
    settings.sampling = cfg.sampling.clone();
    settings.attempt_budget = Duration::from_secs_f64(cfg.attempt_budget_s);
    let n_workers = cfg.max_concurrency.min(tasks.len()).max(1);
    let mut workers = Vec::with_capacity(n_workers);
    for _ in 0..n_workers {
        let executor: Arc<dyn Executor> = Arc::from(executor_from_command(&cfg.worker_cmd, cfg.executor_timeout_s)?);
        workers.push(Worker {
            llm,
            tools: ToolRegistry { executor, docs: docs.clone(), gates: cfg.gates.clone() },
            settings: settings.clone(),
            store: &store,
            max_task_retries: cfg.retry.max_task_retries,
            base_seed: cfg.seed,
        });
    }
    info!("running {} tasks on {} workers", tasks.len(), n_workers);

    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel::<TaskOutcome>();
    let mut outcomes = Vec::with_capacity(tasks.len());
    std::thread::scope(|scope| -> Result<()> {
        for w in &workers {
            let tx = tx.clone();
            let next = &next;
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(task) = tasks.get(i) else { break };
                if tx.send(w.run(i, task)).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for outcome in rx {
            outcome.check(cfg.caps.max_attempts_per_task).map_err(|e| anyhow::anyhow!(e))?;
            store.append_outcome(&outcome)?;
            outcomes.push(outcome);
        }
        Ok(())
    })?;
    let _ = std::fs::remove_dir(store.root().join(".work"));

    let count = |s: TaskStatus| outcomes.iter().filter(|o| o.status == s).count();
    Ok(PipelineSummary {
        n_tasks: tasks.len(),
        accepted: count(TaskStatus::Accepted),
        exhausted: count(TaskStatus::Exhausted),
        aborted: count(TaskStatus::Aborted),
        stats: compute_generation_stats(&outcomes),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::ReplayBackend;

    struct Fails;
    impl ChatBackend for Fails {
        fn chat_complete(&self, _: &ChatRequest) -> Result<ChatResponse, LlmError> {
            Err(LlmError::Retryable { message: "down".into(), attempts: 3 })
        }
    }

    fn names(sel: &EndpointSelector, n: usize) -> Vec<String> {
        (0..n).map(|_| sel.name(sel.next_endpoint().unwrap()).to_string()).collect()
    }

    fn replay() -> Arc<dyn ChatBackend> {
        Arc::new(ReplayBackend::new([]))
    }

    #[test]
    fn round_robin() {
        let one = EndpointSelector::new(vec![("A".into(), replay())]);
        assert_eq!(names(&one, 3), ["A", "A", "A"]);
        let two = EndpointSelector::new(vec![("A".into(), replay()), ("B".into(), replay())]);
        assert_eq!(names(&two, 4), ["A", "B", "A", "B"]);
    }

    #[test]
    fn quarantine_and_reprobe() {
        let now = Arc::new(Mutex::new(Instant::now()));
        let clock = now.clone();
        let sel = EndpointSelector::new(vec![("A".into(), Arc::new(Fails) as Arc<dyn ChatBackend>), ("B".into(), replay())])
            .with_clock(move || *clock.lock().unwrap());
        for _ in 0..QUARANTINE_AFTER {
            sel.record(0, false);
        }
        assert!(sel.is_quarantined(0));
        assert_eq!(names(&sel, 2), ["B", "B"]);
        *now.lock().unwrap() += QUARANTINE_COOLDOWN;
        assert!(!sel.is_quarantined(0));
        let after: Vec<_> = names(&sel, 2);
        assert!(after.contains(&"A".to_string()));
    }

    #[test]
    fn all_quarantined_is_retryable_no_endpoint() {
        let sel = EndpointSelector::new(vec![("A".into(), Arc::new(Fails) as Arc<dyn ChatBackend>)]);
        for _ in 0..QUARANTINE_AFTER {
            sel.record(0, false);
        }
        let err = sel.next_endpoint().unwrap_err();
        assert_eq!(err, LlmError::NoEndpoint);
        assert!(err.is_retryable());
    }

    #[test]
    fn success_resets_failure_count() {
        let sel = EndpointSelector::new(vec![("A".into(), replay())]);
        sel.record(0, false);
        sel.record(0, false);
        sel.record(0, true);
        sel.record(0, false);
        assert!(!sel.is_quarantined(0));
    }

    #[test]
    fn config_defaults_and_validation() {
        let cfg: PipelineConfig = serde_json::from_str(r#"{"endpoints":[{"url":"replay:s.jsonl"}],"task_source":"c.jsonl","store_root":"store"}"#).unwrap();
        assert_eq!(cfg.caps, Caps { max_turns_per_attempt: 10, max_attempts_per_task: 100 });
        assert_eq!(cfg.retry.max_task_retries, 2);
        assert_eq!(cfg.worker_cmd, "builtin:mock");
        assert_eq!(cfg.executor_timeout_s, 60.0);
        assert!(cfg.validate().is_ok());
        let mut bad = cfg.clone();
        bad.max_concurrency = 0;
        assert!(bad.validate().is_err());
        let mut bad = cfg.clone();
        bad.endpoints.clear();
        assert!(bad.validate().is_err());
        let mut rel = cfg;
        rel.resolve_paths(Path::new("/cfg"));
        assert_eq!(rel.task_source, Path::new("/cfg/c.jsonl"));
        assert_eq!(rel.endpoints[0].url, "replay:/cfg/s.jsonl");
    }
}
