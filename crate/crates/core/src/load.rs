//! Workload generation and execution.
//!
//! Constant and piggyback modes are open-loop: arrival times are planned up
//! front and never depend on completions. Concurrent mode is closed-loop:
//! each thread issues its next request as soon as the previous one finishes.
//!
//! On the simulator a request is evaluated against the cluster state at its
//! send time; the clock does not move while it is in flight, so threads are
//! multiplexed onto virtual time without locking.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, ClusterBackend, RequestStatus, ServiceTopology};
use crate::config::WorkloadEntry;
use crate::retry::{with_retry, AttemptLog, OpKind, RetryError, RetryPolicy, Retryable};

/// Closed-loop threads never re-issue faster than this.
pub const MIN_CLOSED_LOOP_STEP_MS: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WorkloadMode {
    Constant,
    Concurrent,
    Piggyback,
}

impl WorkloadMode {
    pub fn as_str(self) -> &'static str {
        match self {
            WorkloadMode::Constant => "constant",
            WorkloadMode::Concurrent => "concurrent",
            WorkloadMode::Piggyback => "piggyback",
        }
    }

    pub fn is_open_loop(self) -> bool {
        self != WorkloadMode::Concurrent
    }

    pub fn parse(s: &str) -> Option<Self> {
        [WorkloadMode::Constant, WorkloadMode::Concurrent, WorkloadMode::Piggyback]
            .into_iter()
            .find(|m| m.as_str() == s)
    }
}

impl fmt::Display for WorkloadMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub mode: WorkloadMode,
    pub threads: u32,
    pub rate_per_thread_rps: f64,
    pub timeout_s: f64,
    pub window_s: f64,
    pub background_rps_per_thread: f64,
    pub burst_size: u32,
    pub burst_every_s: f64,
}

impl WorkloadSpec {
    pub fn from_entry(entry: &WorkloadEntry, threads: u32, timeout_s: f64, window_s: f64) -> Self {
        Self {
            mode: entry.mode,
            threads,
            rate_per_thread_rps: entry.rate_per_thread_rps,
            timeout_s,
            window_s,
            background_rps_per_thread: entry.background_rps_per_thread,
            burst_size: entry.burst_size,
            burst_every_s: entry.burst_every_s,
        }
    }

    /// Constant-rate spec with the piggyback parameters at their defaults.
    pub fn constant(threads: u32, rate_per_thread_rps: f64, timeout_s: f64, window_s: f64) -> Self {
        let mut entry = WorkloadEntry::new(WorkloadMode::Constant);
        entry.rate_per_thread_rps = rate_per_thread_rps;
        Self::from_entry(&entry, threads, timeout_s, window_s)
    }

    pub fn with_mode(mut self, mode: WorkloadMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn timeout_ms(&self) -> f64 {
        self.timeout_s * 1000.0
    }

    pub fn window_ms(&self) -> f64 {
        self.window_s * 1000.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Arrival {
    pub thread: u32,
    /// Offset from load start.
    pub at_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ArrivalSchedule {
    /// Merged arrivals of every thread, sorted by time then thread.
    OpenLoop(Vec<Arrival>),
    ClosedLoop { threads: u32 },
}

impl ArrivalSchedule {
    pub fn planned(&self) -> Option<usize> {
        match self {
            ArrivalSchedule::OpenLoop(a) => Some(a.len()),
            ArrivalSchedule::ClosedLoop { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LoadError {
    #[error("invalid workload: {0}")]
    InvalidWorkload(String),
    #[error("request send failed: {0}")]
    Send(BackendError),
    #[error("backend clock: {0}")]
    Clock(BackendError),
    #[error("fault timeline: {0}")]
    Timeline(String),
    #[error("not a failure")]
    NotAFailure,
}

impl Retryable for LoadError {
    fn is_retryable(&self) -> bool {
        match self {
            LoadError::Send(e) | LoadError::Clock(e) => e.is_retryable(),
            _ => false,
        }
    }
}

/// Evenly spaced times `offset + k * spacing` below `window`.
fn ticks(offset: f64, spacing: f64, window: f64) -> impl Iterator<Item = f64> {
    (0u64..)
        .map(move |k| offset + k as f64 * spacing)
        .take_while(move |t| *t < window)
}

/// Plans request arrivals. Each thread's periodic stream starts at a seeded
/// offset within its first period; bursts start at load start.
pub fn plan_arrivals(workload: &WorkloadSpec, seed: u64) -> Result<ArrivalSchedule, LoadError> {
    if workload.threads == 0 {
        return Err(LoadError::InvalidWorkload("threads must be ≥ 1".to_string()));
    }
    if !(workload.window_s > 0.0) {
        return Err(LoadError::InvalidWorkload("window_s must be > 0".to_string()));
    }
    let window = workload.window_ms();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut arrivals = Vec::new();
    match workload.mode {
        WorkloadMode::Concurrent => {
            return Ok(ArrivalSchedule::ClosedLoop {
                threads: workload.threads,
            })
        }
        WorkloadMode::Constant => {
            if !(workload.rate_per_thread_rps > 0.0) {
                return Err(LoadError::InvalidWorkload("zero rate in constant mode".to_string()));
            }
            let spacing = 1000.0 / workload.rate_per_thread_rps;
            for thread in 0..workload.threads {
                let offset = rng.gen_range(0.0..spacing);
                arrivals.extend(ticks(offset, spacing, window).map(|at_ms| Arrival { thread, at_ms }));
            }
        }
        WorkloadMode::Piggyback => {
            if !(workload.background_rps_per_thread > 0.0) || !(workload.burst_every_s > 0.0) {
                return Err(LoadError::InvalidWorkload("zero rate in piggyback mode".to_string()));
            }
            let spacing = 1000.0 / workload.background_rps_per_thread;
            let burst_every = workload.burst_every_s * 1000.0;
            for thread in 0..workload.threads {
                let offset = rng.gen_range(0.0..spacing);
                arrivals.extend(ticks(offset, spacing, window).map(|at_ms| Arrival { thread, at_ms }));
                for at_ms in ticks(0.0, burst_every, window) {
                    arrivals.extend((0..workload.burst_size).map(|_| Arrival { thread, at_ms }));
                }
            }
        }
    }
    arrivals.sort_by(|a, b| a.at_ms.total_cmp(&b.at_ms).then(a.thread.cmp(&b.thread)));
    Ok(ArrivalSchedule::OpenLoop(arrivals))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestRecord {
    pub experiment_id: String,
    pub request_id: u64,
    /// Offset from load start.
    pub send_ts_ms: f64,
    pub latency_ms: Option<f64>,
    pub outcome: RequestStatus,
    pub error_class: Option<String>,
}

impl RequestRecord {
    pub fn is_success(&self) -> bool {
        self.outcome.is_success()
    }
}

pub fn classify_error(outcome: RequestStatus) -> Result<&'static str, LoadError> {
    match outcome {
        RequestStatus::Success => Err(LoadError::NotAFailure),
        RequestStatus::Timeout => Ok("TIMEOUT"),
        RequestStatus::ConnectionError => Ok("CONN"),
        RequestStatus::ServerError => Ok("HTTP_5XX"),
    }
}

/// Rounds to the 6-decimal grid used by the CSV outputs, so written values
/// read back bit-identical.
pub fn quantize(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

/// Work that must run at given clock times while load is generated.
pub trait Interleave<B: ?Sized> {
    /// Absolute backend time of the next pending action.
    fn next_due_ms(&self) -> Option<f64>;
    fn fire(&mut self, backend: &mut B) -> Result<(), LoadError>;
}

/// No concurrent activity.
pub struct NoInterleave;

impl<B: ?Sized> Interleave<B> for NoInterleave {
    fn next_due_ms(&self) -> Option<f64> {
        None
    }
    fn fire(&mut self, _backend: &mut B) -> Result<(), LoadError> {
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadRun {
    pub records: Vec<RequestRecord>,
    pub load_start_ms: f64,
    /// Failed send attempts that were retried or recorded as connection errors.
    pub send_failures: Vec<AttemptLog>,
}

fn run_due<B: ClusterBackend + ?Sized>(
    backend: &mut B,
    interleave: &mut dyn Interleave<B>,
    until_ms: f64,
) -> Result<(), LoadError> {
    while let Some(due) = interleave.next_due_ms().filter(|d| *d <= until_ms) {
        backend.advance_to(due).map_err(LoadError::Clock)?;
        interleave.fire(backend)?;
    }
    Ok(())
}

struct Executor<'a, B: ?Sized> {
    topology: &'a ServiceTopology,
    workload: &'a WorkloadSpec,
    experiment_id: &'a str,
    policy: &'a RetryPolicy,
    start: f64,
    records: Vec<RequestRecord>,
    send_failures: Vec<AttemptLog>,
    _backend: std::marker::PhantomData<fn(&mut B)>,
}

impl<B: ClusterBackend + ?Sized> Executor<'_, B> {
    /// Sends one request; returns its send time and how long the client
    /// waited for the outcome.
    fn send(&mut self, backend: &mut B) -> Result<(f64, f64), LoadError> {
        let send_ts = backend.now_ms();
        let (topology, timeout_s) = (self.topology, self.workload.timeout_s);
        let failures = &mut self.send_failures;
        let result = with_retry(
            OpKind::RequestSend,
            self.policy,
            backend,
            |b, ms| {
                let _ = b.wait_ms(ms);
            },
            |log| failures.push(log.clone()),
            |b, _| b.send_request(topology, timeout_s),
        );
        let (outcome, latency, elapsed) = match result {
            Ok(o) => (o.status, o.latency_ms.map(quantize), o.elapsed_ms),
            Err(RetryError::Exhausted { .. }) => (RequestStatus::ConnectionError, None, 0.0),
            Err(RetryError::NonRetryable(e, _)) => return Err(LoadError::Send(e)),
        };
        let error_class = classify_error(outcome).ok().map(str::to_string);
        self.records.push(RequestRecord {
            experiment_id: self.experiment_id.to_string(),
            request_id: self.records.len() as u64,
            send_ts_ms: quantize(send_ts - self.start),
            latency_ms: latency,
            outcome,
            error_class,
        });
        Ok((send_ts, elapsed))
    }
}

/// Issues every planned request and records exactly one result per request.
///
/// Open-loop arrivals that are already late are sent immediately, never
/// skipped. A send that keeps failing with a retryable error is recorded as
/// a connection error; a non-retryable error aborts the run.
pub fn execute_workload<B: ClusterBackend + ?Sized>(
    backend: &mut B,
    topology: &ServiceTopology,
    schedule: &ArrivalSchedule,
    workload: &WorkloadSpec,
    experiment_id: &str,
    send_policy: &RetryPolicy,
    interleave: &mut dyn Interleave<B>,
) -> Result<LoadRun, LoadError> {
    let start = backend.now_ms();
    let end = start + workload.window_ms();
    let mut ex = Executor {
        topology,
        workload,
        experiment_id,
        policy: send_policy,
        start,
        records: Vec::new(),
        send_failures: Vec::new(),
        _backend: std::marker::PhantomData,
    };

    match schedule {
        ArrivalSchedule::OpenLoop(arrivals) => {
            for a in arrivals {
                let t = start + a.at_ms;
                run_due(backend, interleave, t)?;
                backend.advance_to(t).map_err(LoadError::Clock)?;
                ex.send(backend)?;
            }
        }
        ArrivalSchedule::ClosedLoop { threads } => {
            let mut free_at = vec![start; *threads as usize];
            loop {
                // Earliest free thread; ties go to the lowest index.
                let (idx, t) = free_at
                    .iter()
                    .copied()
                    .enumerate()
                    .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
                    .expect("threads ≥ 1");
                if t >= end {
                    break;
                }
                run_due(backend, interleave, t)?;
                backend.advance_to(t).map_err(LoadError::Clock)?;
                let (sent_at, elapsed) = ex.send(backend)?;
                let done = (sent_at + elapsed.max(MIN_CLOSED_LOOP_STEP_MS)).max(backend.now_ms());
                free_at[idx] = done;
            }
        }
    }

    run_due(backend, interleave, end)?;
    backend.advance_to(end).map_err(LoadError::Clock)?;
    Ok(LoadRun {
        records: ex.records,
        load_start_ms: start,
        send_failures: ex.send_failures,
    })
}
