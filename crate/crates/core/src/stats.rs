//! Per-task outcomes, generation statistics and dataset splits.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{seq::SliceRandom, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskStatus {
    Accepted,
    Exhausted,
    Aborted,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenCounts {
    pub prompt: u64,
    pub completion: u64,
}

impl core::ops::AddAssign for TokenCounts {
    fn add_assign(&mut self, rhs: Self) {
        self.prompt += rhs.prompt;
        self.completion += rhs.completion;
    }
}

/// Final record for one design task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskOutcome {
    pub task_id: String,
    pub status: TaskStatus,
    pub attempts_used: u32,
    pub total_turns: u32,
    /// Turns taken by each attempt, in order.
    #[serde(default)]
    pub attempt_turns: Vec<u32>,
    pub tool_call_counts: BTreeMap<String, u64>,
    pub tokens: TokenCounts,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub artifact_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum OutcomeError {
    #[error("task {0}: accepted without an artifact id")]
    AcceptedWithoutArtifact(String),
    #[error("task {task}: {used} attempts exceeds cap {cap}")]
    AttemptCap { task: String, used: u32, cap: u32 },
}

impl TaskOutcome {
    pub fn aborted(task_id: impl Into<String>, error: impl Into<String>) -> Self {
        Self {
            task_id: task_id.into(),
            status: TaskStatus::Aborted,
            attempts_used: 0,
            total_turns: 0,
            attempt_turns: Vec::new(),
            tool_call_counts: BTreeMap::new(),
            tokens: TokenCounts::default(),
            artifact_id: None,
            error: Some(error.into()),
        }
    }

    pub fn total_tool_calls(&self) -> u64 {
        self.tool_call_counts.values().sum()
    }

    pub fn check(&self, max_attempts: u32) -> Result<(), OutcomeError> {
        if self.status == TaskStatus::Accepted && self.artifact_id.is_none() {
            return Err(OutcomeError::AcceptedWithoutArtifact(self.task_id.clone()));
        }
        if self.attempts_used > max_attempts {
            return Err(OutcomeError::AttemptCap { task: self.task_id.clone(), used: self.attempts_used, cap: max_attempts });
        }
        Ok(())
    }
}

/// Aggregate repair-loop statistics. Rates and per-design figures are
/// absent when there is nothing to average over.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub n_tasks: u64,
    pub n_accepted: u64,
    pub n_exhausted: u64,
    pub n_aborted: u64,
    /// Tasks accepted on their first attempt, over all tasks.
    pub first_attempt_success_rate: Option<f64>,
    /// Attempts before success, over accepted tasks.
    pub attempts_mean: Option<f64>,
    pub attempts_median: Option<u32>,
    /// Tool calls per accepted design (all attempts).
    pub function_calls_per_conversation_mean: Option<f64>,
    /// Tool calls over every task.
    pub tool_call_totals: BTreeMap<String, u64>,
    /// Completion tokens over every task.
    pub tokens_generated_total: u64,
    /// Prompt tokens over every task.
    pub tokens_processed_total: u64,
    pub generated_tokens_per_design_mean: Option<f64>,
    pub generated_tokens_per_design_median: Option<u64>,
}

fn lower_median<T: Ord + Copy>(mut v: Vec<T>) -> Option<T> {
    if v.is_empty() {
        return None;
    }
    v.sort_unstable();
    Some(v[(v.len() - 1) / 2])
}

/// Builds [`GenerationStats`] from task outcomes; order of `outcomes` does
/// not matter.
pub fn compute_generation_stats(outcomes: &[TaskOutcome]) -> GenerationStats {
    let mut s = GenerationStats { n_tasks: outcomes.len() as u64, ..GenerationStats::default() };
    let mut attempts = Vec::new();
    let mut calls = Vec::new();
    let mut generated = Vec::new();
    let mut first_attempt = 0u64;
    for o in outcomes {
        match o.status {
            TaskStatus::Accepted => {
                s.n_accepted += 1;
                attempts.push(o.attempts_used);
                calls.push(o.total_tool_calls());
                generated.push(o.tokens.completion);
                if o.attempts_used == 1 {
                    first_attempt += 1;
                }
            }
            TaskStatus::Exhausted => s.n_exhausted += 1,
            TaskStatus::Aborted => s.n_aborted += 1,
        }
        for (tool, n) in &o.tool_call_counts {
            *s.tool_call_totals.entry(tool.clone()).or_insert(0) += n;
        }
        s.tokens_generated_total += o.tokens.completion;
        s.tokens_processed_total += o.tokens.prompt;
    }
    let mean_u = |v: &[u64]| (!v.is_empty()).then(|| v.iter().sum::<u64>() as f64 / v.len() as f64);
    if s.n_tasks > 0 {
        s.first_attempt_success_rate = Some(first_attempt as f64 / s.n_tasks as f64);
    }
    s.attempts_mean = (!attempts.is_empty()).then(|| attempts.iter().map(|&a| a as u64).sum::<u64>() as f64 / attempts.len() as f64);
    s.function_calls_per_conversation_mean = mean_u(&calls);
    s.generated_tokens_per_design_mean = mean_u(&generated);
    s.attempts_median = lower_median(attempts);
    s.generated_tokens_per_design_median = lower_median(generated);
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SplitError {
    #[error("requested {n_val} val + {n_test} test but only {total} entries")]
    Insufficient { n_val: usize, n_test: usize, total: usize },
    #[error("duplicate artifact id `{0}`")]
    Duplicate(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplits {
    pub seed: u64,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl DatasetSplits {
    pub fn assignment(&self) -> BTreeMap<&str, Split> {
        let mut out = BTreeMap::new();
        for (ids, split) in [(&self.train, Split::Train), (&self.val, Split::Val), (&self.test, Split::Test)] {
            out.extend(ids.iter().map(|id| (id.as_str(), split)));
        }
        out
    }

    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.val.len(), self.test.len())
    }
}

/// Seeded shuffle of the ids (sorted first, so the result depends only on
/// the id set); the last `n_test` become test, the `n_val` before them
/// validation, the rest train.
pub fn build_manifest_splits(ids: &[String], n_val: usize, n_test: usize, seed: u64) -> Result<DatasetSplits, SplitError> {
    if n_val + n_test > ids.len() {
        return Err(SplitError::Insufficient { n_val, n_test, total: ids.len() });
    }
    let mut order: Vec<String> = ids.to_vec();
    order.sort_unstable();
    if let Some(w) = order.windows(2).find(|w| w[0] == w[1]) {
        return Err(SplitError::Duplicate(w[0].clone()));
    }
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = order.split_off(order.len() - n_test);
    let val = order.split_off(order.len() - n_val);
    Ok(DatasetSplits { seed, train: order, val, test })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;
    use alloc::vec;

    fn accepted(id: &str, attempts: u32, calls: u64, completion: u64) -> TaskOutcome {
        TaskOutcome {
            task_id: id.into(),
            status: TaskStatus::Accepted,
            attempts_used: attempts,
            total_turns: attempts,
            attempt_turns: vec![1; attempts as usize],
            tool_call_counts: [("execute_and_validate".into(), calls)].into_iter().collect(),
            tokens: TokenCounts { prompt: 10 * completion, completion },
            artifact_id: Some(id.into()),
            error: None,
        }
    }

    #[test]
    fn three_accepted() {
        let s = compute_generation_stats(&[accepted("a", 1, 1, 100), accepted("b", 3, 4, 300), accepted("c", 5, 7, 200)]);
        assert_eq!(s.first_attempt_success_rate, Some(1.0 / 3.0));
        assert_eq!(s.attempts_mean, Some(3.0));
        assert_eq!(s.attempts_median, Some(3));
        assert_eq!(s.function_calls_per_conversation_mean, Some(4.0));
        assert_eq!(s.tool_call_totals["execute_and_validate"], 12);
        assert_eq!(s.tokens_generated_total, 600);
        assert_eq!(s.tokens_processed_total, 6000);
        assert_eq!(s.generated_tokens_per_design_median, Some(200));
    }

    #[test]
    fn empty_logs_have_absent_rates() {
        let s = compute_generation_stats(&[]);
        assert_eq!(s.n_tasks, 0);
        assert_eq!(s.first_attempt_success_rate, None);
        assert_eq!(s.attempts_mean, None);
        assert_eq!(s.attempts_median, None);
    }

    #[test]
    fn even_median_is_lower_middle() {
        assert_eq!(lower_median(vec![4, 1, 3, 2]), Some(2));
    }

    #[test]
    fn twenty_entry_split() {
        let ids: Vec<String> = (0..20).map(|i| format!("id{i:02}")).collect();
        let s = build_manifest_splits(&ids, 5, 5, 42).unwrap();
        assert_eq!(s.sizes(), (10, 5, 5));
        assert_eq!(s, build_manifest_splits(&ids, 5, 5, 42).unwrap());
        let mut rev = ids.clone();
        rev.reverse();
        assert_eq!(s, build_manifest_splits(&rev, 5, 5, 42).unwrap());
        assert_eq!(s.assignment().len(), 20);
    }

    #[test]
    fn split_errors() {
        let ids: Vec<String> = (0..3).map(|i| format!("{i}")).collect();
        assert_eq!(build_manifest_splits(&ids, 2, 2, 0), Err(SplitError::Insufficient { n_val: 2, n_test: 2, total: 3 }));
        let dup = vec!["a".into(), "a".into()];
        assert_eq!(build_manifest_splits(&dup, 0, 0, 0), Err(SplitError::Duplicate("a".into())));
    }

    #[test]
    fn outcome_invariants() {
        let mut o = accepted("x", 1, 1, 1);
        assert!(o.check(100).is_ok());
        o.artifact_id = None;
        assert!(o.check(100).is_err());
        let o = accepted("y", 101, 1, 1);
        assert!(matches!(o.check(100), Err(OutcomeError::AttemptCap { .. })));
    }
}
