//! Chat-completion querying: backends, the response cache and the executor
//! that drives permutations through them.

pub mod cache;
pub mod http;
pub mod mock;

use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use aipoll_core::payload::{empirical_distribution, parse_payload, ExpectedSchema, ParsedPayload, PayloadError, SumTolerance};
use aipoll_core::{OpinionDistribution, PermutationKey};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use cache::QueryCache;

use crate::config::BackendConfig;
use crate::error::{Error, Result};

/// One request as the backend sees it.
#[derive(Debug, Clone, Copy)]
pub struct ChatRequest<'a> {
    pub key: &'a PermutationKey,
    pub repeat_index: u32,
    pub cardinality: usize,
    pub prompt: &'a str,
    pub schema: ExpectedSchema,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BackendError {
    /// Worth retrying: timeouts, rate limits, server errors.
    #[error("transient: {0}")]
    Transient(String),
    /// Authentication or request-shape problems; retrying cannot help.
    #[error("fatal: {0}")]
    Fatal(String),
}

pub trait ChatBackend: Send + Sync {
    /// Returns the raw assistant message content.
    fn complete(&self, request: &ChatRequest<'_>) -> Result<String, BackendError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Outcome {
    Ok { payload: ParsedPayload },
    Failed { reason: FailureReason },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "cause", rename_all = "snake_case")]
pub enum FailureReason {
    Payload { error: PayloadError },
    Transport { detail: String },
}

impl std::fmt::Display for FailureReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FailureReason::Payload { error } => write!(f, "{error}"),
            FailureReason::Transport { detail } => write!(f, "transport: {detail}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub key: PermutationKey,
    pub repeat_index: u32,
    pub prompt_sha256: String,
    /// Last raw response received, if any.
    pub raw_response: Option<String>,
    pub outcome: Outcome,
    pub attempts: u32,
    pub timestamp: String,
}

impl QueryRecord {
    pub fn payload(&self) -> Option<&ParsedPayload> {
        match &self.outcome {
            Outcome::Ok { payload } => Some(payload),
            Outcome::Failed { .. } => None,
        }
    }
}

/// A permutation-repeat waiting to be queried.
#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub key: PermutationKey,
    pub repeat_index: u32,
    pub cardinality: usize,
    pub prompt: String,
    pub prompt_sha256: String,
    pub schema: ExpectedSchema,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExecConfig {
    pub max_concurrency: usize,
    pub max_retries: u32,
    pub retry_base_ms: u64,
    pub min_interval_ms: u64,
    pub tolerance: SumTolerance,
}

impl ExecConfig {
    pub fn from_backend(b: &BackendConfig, tolerance: SumTolerance) -> Self {
        ExecConfig {
            max_concurrency: b.max_concurrency,
            max_retries: b.max_retries,
            retry_base_ms: b.retry_base_ms,
            min_interval_ms: b.min_interval_ms,
            tolerance,
        }
    }
}

/// Spaces request starts at least `interval` apart across all workers.
pub struct Pacer {
    interval: Duration,
    next: Mutex<Instant>,
}

impl Pacer {
    pub fn new(interval: Duration) -> Self {
        Pacer { interval, next: Mutex::new(Instant::now()) }
    }

    pub fn wait(&self) {
        if self.interval.is_zero() {
            return;
        }
        let start = {
            let mut next = self.next.lock().expect("pacer lock");
            let start = (*next).max(Instant::now());
            *next = start + self.interval;
            start
        };
        let now = Instant::now();
        if start > now {
            thread::sleep(start - now);
        }
    }
}

fn backoff(cfg: &ExecConfig, attempt: u32) -> Duration {
    if cfg.retry_base_ms == 0 {
        return Duration::ZERO;
    }
    let base = cfg.retry_base_ms as f64 * 2f64.powi(attempt.saturating_sub(1).min(16) as i32);
    let jitter = rand::rng().random_range(0.5..1.5);
    Duration::from_millis((base * jitter) as u64)
}

fn now_stamp() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// Runs one task to completion: retries transport and parse failures with
/// exponential backoff and gives up after `max_retries` retries. A fatal
/// backend error aborts instead of producing a record.
pub fn execute(task: &Task, backend: &dyn ChatBackend, cfg: &ExecConfig, pacer: Option<&Pacer>) -> Result<QueryRecord> {
    let request = ChatRequest {
        key: &task.key,
        repeat_index: task.repeat_index,
        cardinality: task.cardinality,
        prompt: &task.prompt,
        schema: task.schema,
    };
    let mut raw_response = None;
    let mut last_failure = None;
    let mut attempts = 0;
    for attempt in 1..=cfg.max_retries + 1 {
        attempts = attempt;
        if attempt > 1 {
            thread::sleep(backoff(cfg, attempt - 1));
        }
        if let Some(p) = pacer {
            p.wait();
        }
        match backend.complete(&request) {
            Ok(raw) => {
                let parsed = parse_payload(&raw, task.schema, task.cardinality, cfg.tolerance);
                raw_response = Some(raw);
                match parsed {
                    Ok(payload) => {
                        return Ok(QueryRecord {
                            key: task.key.clone(),
                            repeat_index: task.repeat_index,
                            prompt_sha256: task.prompt_sha256.clone(),
                            raw_response,
                            outcome: Outcome::Ok { payload },
                            attempts,
                            timestamp: now_stamp(),
                        });
                    }
                    Err(error) => last_failure = Some(FailureReason::Payload { error }),
                }
            }
            Err(BackendError::Transient(detail)) => last_failure = Some(FailureReason::Transport { detail }),
            Err(BackendError::Fatal(detail)) => return Err(Error::BackendFatal(format!("{}: {detail}", task.key))),
        }
    }
    Ok(QueryRecord {
        key: task.key.clone(),
        repeat_index: task.repeat_index,
        prompt_sha256: task.prompt_sha256.clone(),
        raw_response,
        outcome: Outcome::Failed { reason: last_failure.expect("at least one attempt") },
        attempts,
        timestamp: now_stamp(),
    })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunSummary {
    /// One record per task that has one, cached or fresh, in task order.
    pub records: Vec<QueryRecord>,
    pub from_cache: usize,
    pub executed: usize,
    /// Tasks left for a later run because of the limit.
    pub deferred: usize,
}

impl RunSummary {
    pub fn is_complete(&self) -> bool {
        self.deferred == 0
    }
}

/// Executes every uncached task with at most `max_concurrency` in flight,
/// appending each record to the cache as it lands. With `limit`, only the
/// first `limit` uncached tasks (in task order) run.
pub fn run_tasks(
    tasks: &[Task],
    backend: &dyn ChatBackend,
    cache: &QueryCache,
    cfg: &ExecConfig,
    limit: Option<usize>,
) -> Result<RunSummary> {
    let mut slots: Vec<Option<QueryRecord>> = vec![None; tasks.len()];
    let mut pending = Vec::new();
    for (i, t) in tasks.iter().enumerate() {
        match cache.get(&t.key, t.repeat_index, &t.prompt_sha256) {
            Some(r) => slots[i] = Some(r),
            None => pending.push(i),
        }
    }
    let from_cache = tasks.len() - pending.len();
    let run_now = limit.map_or(pending.len(), |l| l.min(pending.len()));
    let deferred = pending.len() - run_now;
    let pending = &pending[..run_now];

    let pacer = Pacer::new(Duration::from_millis(cfg.min_interval_ms));
    let next = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let fatal: Mutex<Option<Error>> = Mutex::new(None);
    let done: Mutex<Vec<(usize, QueryRecord)>> = Mutex::new(Vec::with_capacity(pending.len()));
    let workers = cfg.max_concurrency.max(1).min(pending.len().max(1));

    thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                if abort.load(Ordering::SeqCst) {
                    return;
                }
                let n = next.fetch_add(1, Ordering::SeqCst);
                let Some(&i) = pending.get(n) else { return };
                match execute(&tasks[i], backend, cfg, Some(&pacer)).and_then(|r| cache.append(&r).map(|_| r)) {
                    Ok(record) => done.lock().expect("result lock").push((i, record)),
                    Err(e) => {
                        abort.store(true, Ordering::SeqCst);
                        fatal.lock().expect("error lock").get_or_insert(e);
                        return;
                    }
                }
            });
        }
    });
    if let Some(e) = fatal.into_inner().expect("error lock") {
        return Err(e);
    }
    let done = done.into_inner().expect("result lock");
    let executed = done.len();
    for (i, r) in done {
        slots[i] = Some(r);
    }
    Ok(RunSummary { records: slots.into_iter().flatten().collect(), from_cache, executed, deferred })
}

/// A model-side distribution for one permutation, or why there is none.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDistribution {
    pub key: PermutationKey,
    pub n_requested: u32,
    pub n_success: u32,
    pub distribution: Option<OpinionDistribution>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

/// Empirical distribution over the successful SI repeats of one permutation.
pub fn collect_si(key: &PermutationKey, records: &[&QueryRecord], cardinality: usize, repeats: u32) -> ModelDistribution {
    let scores: Vec<u32> = records
        .iter()
        .filter_map(|r| match r.payload() {
            Some(ParsedPayload::Score { score, .. }) => Some(*score),
            _ => None,
        })
        .collect();
    let n_success = scores.len() as u32;
    match empirical_distribution(&scores, cardinality, &key.to_string()) {
        Ok(d) => ModelDistribution { key: key.clone(), n_requested: repeats, n_success, distribution: Some(d), failure: None },
        Err(e) => ModelDistribution {
            key: key.clone(),
            n_requested: repeats,
            n_success,
            distribution: None,
            failure: Some(e.to_string()),
        },
    }
}

/// The normalized distribution from a DD record, or the failure that replaced it.
pub fn collect_dd(key: &PermutationKey, record: Option<&QueryRecord>) -> ModelDistribution {
    let base = ModelDistribution { key: key.clone(), n_requested: 1, n_success: 0, distribution: None, failure: None };
    match record.map(|r| &r.outcome) {
        Some(Outcome::Ok { payload }) => match payload.to_distribution() {
            Some(d) => ModelDistribution { n_success: 1, distribution: Some(d), ..base },
            None => ModelDistribution { failure: Some("payload carries no distribution".into()), ..base },
        },
        Some(Outcome::Failed { reason }) => ModelDistribution { failure: Some(reason.to_string()), ..base },
        None => ModelDistribution { failure: Some("not queried".into()), ..base },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use aipoll_core::{DemographicCell, Gender, Ideology, PromptVariant, Race};
    use std::sync::atomic::AtomicU32;

    struct Scripted {
        replies: Vec<Result<String, BackendError>>,
        calls: AtomicU32,
    }

    impl ChatBackend for Scripted {
        fn complete(&self, _: &ChatRequest<'_>) -> Result<String, BackendError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst) as usize;
            self.replies[n.min(self.replies.len() - 1)].clone()
        }
    }

    fn scripted(replies: Vec<Result<String, BackendError>>) -> Scripted {
        Scripted { replies, calls: AtomicU32::new(0) }
    }

    fn key(variant: PromptVariant) -> PermutationKey {
        PermutationKey::new("q1", DemographicCell::new(Ideology::Liberal, Gender::Man, Race::White), variant)
    }

    fn task(variant: PromptVariant, c: usize) -> Task {
        let schema = aipoll_core::prompt::expected_schema(variant);
        Task { key: key(variant), repeat_index: 0, cardinality: c, prompt: "p".into(), prompt_sha256: "h".into(), schema }
    }

    fn cfg(retries: u32) -> ExecConfig {
        ExecConfig { max_concurrency: 2, max_retries: retries, retry_base_ms: 0, min_interval_ms: 0, tolerance: SumTolerance::default() }
    }

    #[test]
    fn si_score_passes_through() {
        let b = scripted(vec![Ok(r#"{"justification":"because","score":3}"#.into())]);
        let r = execute(&task(PromptVariant::si(), 5), &b, &cfg(2), None).unwrap();
        assert_eq!(r.attempts, 1);
        assert!(matches!(r.payload(), Some(ParsedPayload::Score { score: 3, .. })));
    }

    #[test]
    fn dd_distribution_normalizes() {
        let b = scripted(vec![Ok(r#"{"justification":"","distribution":[10,20,30,25,15]}"#.into())]);
        let r = execute(&task(PromptVariant::dd(false, false), 5), &b, &cfg(0), None).unwrap();
        let d = collect_dd(&r.key, Some(&r)).distribution.unwrap();
        let want = [0.10, 0.20, 0.30, 0.25, 0.15];
        assert!(d.probs().iter().zip(want).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn wrong_length_retries_then_fails() {
        let b = scripted(vec![Ok(r#"{"justification":"x","distribution":[25,25,25,25]}"#.into())]);
        let r = execute(&task(PromptVariant::dd(true, false), 5), &b, &cfg(3), None).unwrap();
        assert_eq!(r.attempts, 4);
        assert_eq!(b.calls.load(Ordering::SeqCst), 4);
        assert!(matches!(
            r.outcome,
            Outcome::Failed { reason: FailureReason::Payload { error: PayloadError::WrongLength { expected: 5, got: 4 } } }
        ));
        let md = collect_dd(&r.key, Some(&r));
        assert!(md.distribution.is_none() && md.failure.is_some());
    }

    #[test]
    fn transient_then_success() {
        let b = scripted(vec![
            Err(BackendError::Transient("timeout".into())),
            Ok(r#"{"justification":"","distribution":[100,0]}"#.into()),
        ]);
        let r = execute(&task(PromptVariant::dd(false, true), 2), &b, &cfg(3), None).unwrap();
        assert_eq!(r.attempts, 2);
        assert_eq!(collect_dd(&r.key, Some(&r)).distribution.unwrap().probs(), &[1.0, 0.0]);
    }

    #[test]
    fn fatal_aborts() {
        let b = scripted(vec![Err(BackendError::Fatal("401".into()))]);
        assert!(matches!(execute(&task(PromptVariant::si(), 5), &b, &cfg(3), None), Err(Error::BackendFatal(_))));
    }

    fn score_record(score: u32, i: u32) -> QueryRecord {
        QueryRecord {
            key: key(PromptVariant::si()),
            repeat_index: i,
            prompt_sha256: "h".into(),
            raw_response: None,
            outcome: Outcome::Ok { payload: ParsedPayload::Score { score, justification: String::new() } },
            attempts: 1,
            timestamp: String::new(),
        }
    }

    #[test]
    fn si_collection_counts() {
        let k = key(PromptVariant::si());
        let all_two: Vec<QueryRecord> = (0..20).map(|i| score_record(2, i)).collect();
        let refs: Vec<&QueryRecord> = all_two.iter().collect();
        assert_eq!(collect_si(&k, &refs, 4, 20).distribution.unwrap().probs(), &[0.0, 1.0, 0.0, 0.0]);

        let halves: Vec<QueryRecord> = (0..20).map(|i| score_record(1 + (i >= 10) as u32, i)).collect();
        let refs: Vec<&QueryRecord> = halves.iter().collect();
        assert_eq!(collect_si(&k, &refs, 2, 20).distribution.unwrap().probs(), &[0.5, 0.5]);

        let fixture = [1, 1, 2, 3, 3, 3, 4, 5, 5, 5, 2, 2, 4, 4, 4, 4, 1, 3, 5, 5];
        let recs: Vec<QueryRecord> = fixture.iter().enumerate().map(|(i, s)| score_record(*s, i as u32)).collect();
        let refs: Vec<&QueryRecord> = recs.iter().collect();
        let d = collect_si(&k, &refs, 5, 20).distribution.unwrap();
        let mut tally = [0.0; 5];
        for s in fixture {
            tally[s as usize - 1] += 1.0 / 20.0;
        }
        assert!(d.probs().iter().zip(tally).all(|(a, b)| (a - b).abs() < 1e-12));

        let none = collect_si(&k, &[], 5, 20);
        assert_eq!(none.n_success, 0);
        assert!(none.distribution.is_none());
    }

    #[test]
    fn limit_defers_and_resume_finishes() {
        let dir = tempfile::tempdir().unwrap();
        let cache = QueryCache::open(&dir.path().join("q.jsonl")).unwrap();
        let b = scripted(vec![Ok(r#"{"justification":"j","score":1}"#.into())]);
        let tasks: Vec<Task> = (0..10)
            .map(|i| Task { repeat_index: i, ..task(PromptVariant::si(), 2) })
            .collect();
        let first = run_tasks(&tasks, &b, &cache, &cfg(0), Some(4)).unwrap();
        assert_eq!((first.executed, first.deferred, first.records.len()), (4, 6, 4));
        let cache = QueryCache::open(&dir.path().join("q.jsonl")).unwrap();
        let second = run_tasks(&tasks, &b, &cache, &cfg(0), None).unwrap();
        assert_eq!((second.from_cache, second.executed, second.deferred), (4, 6, 0));
        assert_eq!(b.calls.load(Ordering::SeqCst), 10);
        let third = run_tasks(&tasks, &b, &QueryCache::open(&dir.path().join("q.jsonl")).unwrap(), &cfg(0), None).unwrap();
        assert_eq!(third.executed, 0);
        assert_eq!(b.calls.load(Ordering::SeqCst), 10);
        assert_eq!(third.records, second.records);
    }
}
