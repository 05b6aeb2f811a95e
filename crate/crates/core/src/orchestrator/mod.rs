//! Experiment lifecycle and campaign runner.
//!
//! Every experiment runs five phases in order:
//!
//! 1. wait for a healthy cluster, or abort without touching it;
//! 2. apply the fault and record the confirmed fault-on time;
//! 3. generate load while the fault timeline switches the fault on and off;
//! 4. summarise the records;
//! 5. remove faults, restart deployments, stabilise and re-validate.
//!
//! A failed phase 5 halts the campaign: later cases would start from a
//! cluster in an unknown state.

pub mod timeline;

use std::collections::BTreeMap;
use std::fmt;
use std::io;

use serde::Serialize;
use thiserror::Error;

use crate::backend::{BackendError, ClusterBackend, FaultHandle};
use crate::config::{derive_seed, expand_campaign, streams, ExperimentCase, ExperimentPlan, PlanError, RetryPolicySet};
use crate::fault::{self, build_timeline};
use crate::health::{self, HealthReport, DEFAULT_INTERVAL_MS, DEFAULT_MAX_ATTEMPTS};
use crate::load::{execute_workload, plan_arrivals, LoadError, RequestRecord};
use crate::metrics::{
    correlate_fault_windows, successful_latencies, summarize, zscore_normalize, CaseKey, CaseSample, DegradationReport,
    MetricsSummary, ZScoreTable, DEFAULT_BASELINE_INTENSITY,
};
use crate::retry::{with_retry, AttemptLog, OpKind};
use crate::stats::ZScore;

pub use timeline::TimelineRunner;

#[derive(Debug, Clone, PartialEq)]
pub struct RunnerConfig {
    pub namespace: String,
    pub health_interval_ms: f64,
    pub health_max_attempts: u32,
    pub stabilization_s: f64,
    pub retries: RetryPolicySet,
    pub baseline_intensity: u32,
}

impl Default for RunnerConfig {
    fn default() -> Self {
        Self {
            namespace: "app".to_string(),
            health_interval_ms: DEFAULT_INTERVAL_MS,
            health_max_attempts: DEFAULT_MAX_ATTEMPTS,
            stabilization_s: health::DEFAULT_STABILIZATION_S,
            retries: RetryPolicySet::default(),
            baseline_intensity: DEFAULT_BASELINE_INTENSITY,
        }
    }
}

impl RunnerConfig {
    pub fn from_plan(plan: &ExperimentPlan) -> Self {
        Self {
            stabilization_s: plan.stabilization_s,
            retries: plan.retries,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum Phase {
    #[serde(rename = "campaign")]
    Campaign,
    P1,
    P2,
    P3,
    P4,
    P5,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Campaign => "campaign",
            Phase::P1 => "P1",
            Phase::P2 => "P2",
            Phase::P3 => "P3",
            Phase::P4 => "P4",
            Phase::P5 => "P5",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Phase::Campaign, Phase::P1, Phase::P2, Phase::P3, Phase::P4, Phase::P5]
            .into_iter()
            .find(|p| p.as_str() == s)
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One line of events.log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseEvent {
    pub ts_ms: f64,
    pub phase: Phase,
    pub event: String,
    pub detail: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum AbortReason {
    UnhealthyPrecondition,
    FaultApply,
    Load,
    Recovery,
}

impl AbortReason {
    pub fn as_str(self) -> &'static str {
        match self {
            AbortReason::UnhealthyPrecondition => "unhealthy-precondition",
            AbortReason::FaultApply => "fault-apply",
            AbortReason::Load => "load",
            AbortReason::Recovery => "recovery",
        }
    }
}

impl fmt::Display for AbortReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentStatus {
    Completed,
    Aborted(AbortReason),
}

impl fmt::Display for ExperimentStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExperimentStatus::Completed => f.write_str("completed"),
            ExperimentStatus::Aborted(r) => write!(f, "aborted({r})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentResult {
    pub case_id: String,
    pub key: CaseKey,
    pub phase_log: Vec<PhaseEvent>,
    pub fault_on_ts_ms: Option<f64>,
    pub fault_off_ts_ms: Option<f64>,
    pub load_start_ms: Option<f64>,
    /// `None` for closed-loop workloads.
    pub planned_arrivals: Option<usize>,
    pub records: Vec<RequestRecord>,
    pub summary: Option<MetricsSummary>,
    pub degradation: Option<DegradationReport>,
    pub status: ExperimentStatus,
    /// Set when the cluster could not be brought back to a healthy state.
    pub halts_campaign: bool,
    pub fault_applies: u32,
    pub final_health: Option<HealthReport>,
}

impl ExperimentResult {
    pub fn is_completed(&self) -> bool {
        self.status == ExperimentStatus::Completed
    }

    pub fn sample(&self) -> Option<CaseSample> {
        Some(CaseSample {
            key: self.key.clone(),
            summary: self.summary.clone()?,
            success_latencies: successful_latencies(&self.records),
        })
    }
}

struct Recorder<'a> {
    log: Vec<PhaseEvent>,
    emit: &'a mut dyn FnMut(&PhaseEvent),
}

impl Recorder<'_> {
    fn push(&mut self, ev: PhaseEvent) {
        (self.emit)(&ev);
        self.log.push(ev);
    }

    fn event(&mut self, ts_ms: f64, phase: Phase, event: &str, detail: impl Into<String>) {
        self.push(PhaseEvent {
            ts_ms,
            phase,
            event: event.to_string(),
            detail: detail.into(),
        });
    }

    fn attempt(&mut self, ts_ms: f64, phase: Phase, log: &AttemptLog) {
        let event = if log.backoff_ms.is_some() { "retry" } else { "attempt_failed" };
        let backoff = log.backoff_ms.map(|b| format!("; backoff {b} ms")).unwrap_or_default();
        self.event(ts_ms, phase, event, format!("{} attempt {}: {}{backoff}", log.op, log.attempt, log.error));
    }
}

fn health_detail(attempt: u32, r: &Result<HealthReport, BackendError>) -> String {
    match r {
        Ok(rep) => format!("attempt {attempt}: {}", rep.summary()),
        Err(e) => format!("attempt {attempt}: error: {e}"),
    }
}

/// Runs one case through the five phases. `baseline` is the `(mu, sigma)`
/// of the case's group, used for window onset detection when known.
pub fn run_experiment<B: ClusterBackend + ?Sized>(
    case: &ExperimentCase,
    backend: &mut B,
    cfg: &RunnerConfig,
    baseline: Option<(f64, f64)>,
    emit: &mut dyn FnMut(&PhaseEvent),
) -> ExperimentResult {
    let mut rec = Recorder { log: Vec::new(), emit };
    let mut result = ExperimentResult {
        case_id: case.case_id.clone(),
        key: CaseKey::from_case(case),
        phase_log: Vec::new(),
        fault_on_ts_ms: None,
        fault_off_ts_ms: None,
        load_start_ms: None,
        planned_arrivals: None,
        records: Vec::new(),
        summary: None,
        degradation: None,
        status: ExperimentStatus::Completed,
        halts_campaign: false,
        fault_applies: 0,
        final_health: None,
    };
    let ns = cfg.namespace.as_str();

    // P1: precondition.
    let pre = {
        let mut checks = Vec::new();
        let r = health::await_healthy_observed(
            backend,
            ns,
            cfg.health_interval_ms,
            cfg.health_max_attempts,
            &mut |a, r| checks.push((r.as_ref().map_or(f64::NAN, |h| h.checked_at_ms), health_detail(a, r))),
        );
        for (ts, detail) in checks {
            let ts = if ts.is_nan() { backend.now_ms() } else { ts };
            rec.event(ts, Phase::P1, "health_check", detail);
        }
        r
    };
    if let Err(e) = pre {
        rec.event(backend.now_ms(), Phase::P1, "abort", format!("{}: {e}", AbortReason::UnhealthyPrecondition));
        result.status = ExperimentStatus::Aborted(AbortReason::UnhealthyPrecondition);
        result.phase_log = rec.log;
        return result;
    }
    rec.event(backend.now_ms(), Phase::P1, "precondition_ok", "");

    // P2: fault activation.
    let mut runner: Option<TimelineRunner> = None;
    let policies = cfg.retries;
    let timeline = build_timeline(&case.fault, case.workload.window_s);
    let applied: Result<FaultHandle, String> = match &timeline {
        Err(e) => Err(e.to_string()),
        Ok(_) => {
            let mut failures = Vec::new();
            let r = with_retry(
                OpKind::FaultInjection,
                &policies.fault_injection,
                backend,
                |b, ms| {
                    let _ = b.wait_ms(ms);
                },
                |log| failures.push(log.clone()),
                |b, _| fault::apply_fault(b, &case.fault),
            );
            let now = backend.now_ms();
            for f in &failures {
                rec.attempt(now, Phase::P2, f);
            }
            r.map_err(|e| e.to_string())
        }
    };
    match applied {
        Ok(handle) => {
            result.fault_applies += 1;
            result.fault_on_ts_ms = Some(handle.on_ts_ms);
            rec.event(
                handle.on_ts_ms,
                Phase::P2,
                "fault_on",
                format!("{} {} targets={}", handle.id, case.fault.action, case.fault.targets.join(",")),
            );
            let tl = timeline.as_ref().expect("timeline built");
            runner = Some(TimelineRunner::new(
                case.fault.clone(),
                tl,
                handle.on_ts_ms,
                handle,
                policies.fault_injection,
            ));
        }
        Err(e) => {
            rec.event(backend.now_ms(), Phase::P2, "abort", format!("{}: {e}", AbortReason::FaultApply));
            result.status = ExperimentStatus::Aborted(AbortReason::FaultApply);
        }
    }

    // P3: load under the fault timeline.
    if let (Some(r), Ok(tl)) = (runner.as_mut(), timeline.as_ref()) {
        let load = plan_arrivals(&case.workload, derive_seed(case.seed, streams::ARRIVALS)).and_then(|schedule| {
            result.planned_arrivals = schedule.planned();
            rec.event(
                backend.now_ms(),
                Phase::P3,
                "load_start",
                format!(
                    "mode={} threads={} planned={}",
                    case.workload.mode,
                    case.workload.threads,
                    schedule.planned().map_or("closed-loop".to_string(), |n| n.to_string())
                ),
            );
            let mut failures = Vec::new();
            let out = with_retry(
                OpKind::LoadGeneration,
                &policies.load_generation,
                backend,
                |b, ms| {
                    let _ = b.wait_ms(ms);
                },
                |log| failures.push(log.clone()),
                |b, _| {
                    execute_workload(
                        b,
                        &case.service,
                        &schedule,
                        &case.workload,
                        &case.case_id,
                        &policies.request_send,
                        r,
                    )
                },
            );
            for ev in r.take_events() {
                rec.push(ev);
            }
            let now = backend.now_ms();
            for f in &failures {
                rec.attempt(now, Phase::P3, f);
            }
            out.map_err(|e| e.into_inner())
        });
        match load {
            Ok(run) => {
                result.load_start_ms = Some(run.load_start_ms);
                rec.event(
                    backend.now_ms(),
                    Phase::P3,
                    "load_end",
                    format!("records={} send_failures={}", run.records.len(), run.send_failures.len()),
                );
                result.records = run.records;
                result.fault_applies += r.applies();

                // P4: analysis.
                match summarize(&result.records, case.workload.timeout_s) {
                    Ok(s) => {
                        rec.event(
                            backend.now_ms(),
                            Phase::P4,
                            "summarized",
                            format!(
                                "total={} failed={} failure_rate={:.6} p95_ms={}",
                                s.total,
                                s.failed,
                                s.failure_rate,
                                s.p95_ms.map_or("-".to_string(), |p| format!("{p:.6}"))
                            ),
                        );
                        result.summary = Some(s);
                    }
                    Err(e) => rec.event(backend.now_ms(), Phase::P4, "summarized", e.to_string()),
                }
                let offset = result.fault_on_ts_ms.unwrap_or(run.load_start_ms) - run.load_start_ms;
                let d = correlate_fault_windows(&result.records, tl, offset, baseline);
                let peak = d
                    .windows
                    .iter()
                    .filter_map(|w| w.amplification)
                    .fold(None, |m: Option<f64>, a| Some(m.map_or(a, |m| m.max(a))));
                rec.event(
                    backend.now_ms(),
                    Phase::P4,
                    "degradation",
                    format!(
                        "windows={} peak_amplification={}",
                        d.windows.len(),
                        peak.map_or("-".to_string(), |p| format!("{p:.6}"))
                    ),
                );
                result.degradation = Some(d);
            }
            Err(e) => {
                let reason = match e {
                    LoadError::Timeline(_) => AbortReason::FaultApply,
                    _ => AbortReason::Load,
                };
                rec.event(backend.now_ms(), Phase::P3, "abort", format!("{reason}: {e}"));
                result.status = ExperimentStatus::Aborted(reason);
            }
        }
    }

    // P5: recovery.
    let recovered = recover(backend, cfg, runner.as_mut(), &mut rec, &mut result);
    if !recovered {
        result.halts_campaign = true;
        if result.status == ExperimentStatus::Completed {
            result.status = ExperimentStatus::Aborted(AbortReason::Recovery);
        }
        rec.event(backend.now_ms(), Phase::P5, "abort", AbortReason::Recovery.as_str());
    }
    result.phase_log = rec.log;
    result
}

fn recover<B: ClusterBackend + ?Sized>(
    backend: &mut B,
    cfg: &RunnerConfig,
    runner: Option<&mut TimelineRunner>,
    rec: &mut Recorder<'_>,
    result: &mut ExperimentResult,
) -> bool {
    let ns = cfg.namespace.as_str();
    let policies = cfg.retries;
    if let Some(r) = runner {
        let outcome = r.remove_all(backend);
        for mut ev in r.take_events() {
            ev.phase = Phase::P5;
            rec.push(ev);
        }
        result.fault_off_ts_ms = r.last_off_ms();
        if let Err(e) = outcome {
            rec.event(backend.now_ms(), Phase::P5, "fault_remove_failed", e.to_string());
            return false;
        }
    }

    let stale = match backend.active_fault_schedules() {
        Ok(s) => s,
        Err(e) => {
            rec.event(backend.now_ms(), Phase::P5, "fault_query_failed", e.to_string());
            Vec::new()
        }
    };
    for h in stale {
        match backend.remove_fault(&h) {
            Ok(()) => {
                result.fault_off_ts_ms = Some(backend.now_ms());
                rec.event(backend.now_ms(), Phase::P5, "fault_off", format!("{} stale", h.id));
            }
            Err(e) => {
                rec.event(backend.now_ms(), Phase::P5, "fault_remove_failed", format!("{}: {e}", h.id));
                return false;
            }
        }
    }

    let mut failures = Vec::new();
    let restart = with_retry(
        OpKind::ClusterValidation,
        &policies.cluster_validation,
        backend,
        |b, ms| {
            let _ = b.wait_ms(ms);
        },
        |log| failures.push(log.clone()),
        |b, _| health::restart_deployments(b, ns),
    );
    let now = backend.now_ms();
    for f in &failures {
        rec.attempt(now, Phase::P5, f);
    }
    match restart {
        Ok(rep) => {
            let done = rep.deployments.iter().filter(|d| d.completed).count();
            rec.event(
                rep.finished_ms,
                Phase::P5,
                "restart",
                format!(
                    "deployments={} completed={} active_overlays={}",
                    rep.deployments.len(),
                    done,
                    rep.active_overlays.len()
                ),
            );
        }
        Err(e) => {
            rec.event(backend.now_ms(), Phase::P5, "restart_failed", e.to_string());
            return false;
        }
    }

    if let Err(e) = backend.wait_ms(cfg.stabilization_s * 1000.0) {
        rec.event(backend.now_ms(), Phase::P5, "stabilize_failed", e.to_string());
        return false;
    }
    rec.event(backend.now_ms(), Phase::P5, "stabilized", format!("{} s", cfg.stabilization_s));

    let mut checks = Vec::new();
    let post = health::await_healthy_observed(
        backend,
        ns,
        cfg.health_interval_ms,
        cfg.health_max_attempts,
        &mut |a, r| checks.push((r.as_ref().map_or(f64::NAN, |h| h.checked_at_ms), health_detail(a, r))),
    );
    for (ts, detail) in checks {
        let ts = if ts.is_nan() { backend.now_ms() } else { ts };
        rec.event(ts, Phase::P5, "health_check", detail);
    }
    match post {
        Ok(h) => {
            rec.event(h.checked_at_ms, Phase::P5, "recovered", "");
            result.final_health = Some(h);
            true
        }
        Err(e) => {
            if let health::HealthError::Exhausted { last, .. } = &e {
                result.final_health = last.clone();
            }
            false
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AbortedCase {
    pub case_id: String,
    pub reason: AbortReason,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CampaignResult {
    pub plan_name: String,
    pub seed: u64,
    pub expanded: usize,
    /// Every executed experiment, completed or aborted, in expansion order.
    pub results: Vec<ExperimentResult>,
    pub aborted_cases: Vec<AbortedCase>,
    /// Cases never started because the campaign halted.
    pub unrun_cases: Vec<String>,
    pub halted: bool,
    pub started_ms: f64,
    pub finished_ms: f64,
    pub zscores: ZScoreTable,
    /// Campaign and phase events in emission order.
    pub events: Vec<PhaseEvent>,
}

impl CampaignResult {
    /// Aborted experiments over executed experiments.
    pub fn experiment_failure_rate(&self) -> f64 {
        if self.results.is_empty() {
            0.0
        } else {
            self.aborted_cases.len() as f64 / self.results.len() as f64
        }
    }

    pub fn samples(&self) -> Vec<CaseSample> {
        self.results.iter().filter_map(ExperimentResult::sample).collect()
    }

    pub fn all_completed(&self) -> bool {
        self.aborted_cases.is_empty() && self.unrun_cases.is_empty()
    }
}

/// Receives campaign output as it is produced.
pub trait CampaignSink {
    fn begin(&mut self, plan: &ExperimentPlan, cases: &[ExperimentCase]) -> io::Result<()>;
    fn event(&mut self, event: &PhaseEvent) -> io::Result<()>;
    fn experiment(&mut self, result: &ExperimentResult) -> io::Result<()>;
    fn finish(&mut self, campaign: &CampaignResult) -> io::Result<()>;
}

/// Discards everything.
pub struct NullSink;

impl CampaignSink for NullSink {
    fn begin(&mut self, _: &ExperimentPlan, _: &[ExperimentCase]) -> io::Result<()> {
        Ok(())
    }
    fn event(&mut self, _: &PhaseEvent) -> io::Result<()> {
        Ok(())
    }
    fn experiment(&mut self, _: &ExperimentResult) -> io::Result<()> {
        Ok(())
    }
    fn finish(&mut self, _: &CampaignResult) -> io::Result<()> {
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum CampaignError {
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error("cannot construct backend: {0}")]
    Backend(#[from] BackendError),
    #[error("writing outputs: {0}")]
    Output(#[from] io::Error),
}

/// Expands `plan`, builds the backend with `factory` and runs every case.
pub fn run_campaign<B, F>(plan: &ExperimentPlan, factory: F, sink: &mut dyn CampaignSink) -> Result<CampaignResult, CampaignError>
where
    B: ClusterBackend,
    F: FnOnce(&ExperimentPlan) -> Result<B, BackendError>,
{
    let cases = expand_campaign(plan)?;
    let mut backend = factory(plan)?;
    run_cases(plan, &cases, &mut backend, &RunnerConfig::from_plan(plan), sink)
}

struct Emitter<'a> {
    sink: &'a mut dyn CampaignSink,
    err: Option<io::Error>,
    log: Vec<PhaseEvent>,
}

impl Emitter<'_> {
    // The first sink error is kept and surfaced after the running experiment.
    fn emit(&mut self, ev: &PhaseEvent) {
        self.log.push(ev.clone());
        if self.err.is_none() {
            if let Err(e) = self.sink.event(ev) {
                self.err = Some(e);
            }
        }
    }
}

/// Runs already expanded cases on an existing backend.
pub fn run_cases<B: ClusterBackend + ?Sized>(
    plan: &ExperimentPlan,
    cases: &[ExperimentCase],
    backend: &mut B,
    cfg: &RunnerConfig,
    sink: &mut dyn CampaignSink,
) -> Result<CampaignResult, CampaignError> {
    sink.begin(plan, cases)?;
    let mut em = Emitter {
        sink,
        err: None,
        log: Vec::new(),
    };
    let started_ms = backend.now_ms();
    em.emit(&PhaseEvent {
        ts_ms: started_ms,
        phase: Phase::Campaign,
        event: "campaign_start".to_string(),
        detail: format!("{} cases={} seed={}", plan.name, cases.len(), plan.seed),
    });

    let mut results = Vec::new();
    let mut aborted_cases = Vec::new();
    let mut unrun_cases = Vec::new();
    let mut halted = false;
    let mut baselines: BTreeMap<String, (f64, f64)> = BTreeMap::new();

    for case in cases {
        if halted {
            unrun_cases.push(case.case_id.clone());
            continue;
        }
        backend.reseed(derive_seed(case.seed, streams::BACKEND));
        em.emit(&PhaseEvent {
            ts_ms: backend.now_ms(),
            phase: Phase::Campaign,
            event: "experiment_start".to_string(),
            detail: case.case_id.clone(),
        });
        let key = CaseKey::from_case(case);
        let baseline = baselines.get(&key.group_key()).copied();
        let result = run_experiment(case, backend, cfg, baseline, &mut |ev| em.emit(ev));
        em.emit(&PhaseEvent {
            ts_ms: backend.now_ms(),
            phase: Phase::Campaign,
            event: "experiment_end".to_string(),
            detail: format!("{} {}", case.case_id, result.status),
        });
        if let Some(e) = em.err.take() {
            return Err(e.into());
        }

        if result.is_completed() && case.intensity == cfg.baseline_intensity {
            if let Some(z) = ZScore::fit(&successful_latencies(&result.records)) {
                baselines.insert(key.group_key(), (z.mean, z.std_dev));
            }
        }
        if let ExperimentStatus::Aborted(reason) = result.status {
            aborted_cases.push(AbortedCase {
                case_id: case.case_id.clone(),
                reason,
            });
        }
        if result.halts_campaign {
            halted = true;
            em.emit(&PhaseEvent {
                ts_ms: backend.now_ms(),
                phase: Phase::Campaign,
                event: "campaign_halted".to_string(),
                detail: format!("recovery failed after {}", case.case_id),
            });
        }
        em.sink.experiment(&result)?;
        results.push(result);
    }

    let samples: Vec<CaseSample> = results.iter().filter_map(ExperimentResult::sample).collect();
    let zscores = zscore_normalize(&samples, cfg.baseline_intensity, false).expect("lenient normalisation");
    let finished_ms = backend.now_ms();
    em.emit(&PhaseEvent {
        ts_ms: finished_ms,
        phase: Phase::Campaign,
        event: "campaign_end".to_string(),
        detail: format!(
            "executed={} aborted={} unrun={}",
            results.len(),
            aborted_cases.len(),
            unrun_cases.len()
        ),
    });
    if let Some(e) = em.err.take() {
        return Err(e.into());
    }
    let campaign = CampaignResult {
        plan_name: plan.name.clone(),
        seed: plan.seed,
        expanded: cases.len(),
        results,
        aborted_cases,
        unrun_cases,
        halted,
        started_ms,
        finished_ms,
        zscores,
        events: em.log,
    };
    em.sink.finish(&campaign)?;
    Ok(campaign)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{build_cluster, SimCluster};
    use crate::fault::FaultAction;

    fn plan(faults: &[FaultAction], intensities: &[u32]) -> ExperimentPlan {
        let mut p = ExperimentPlan::new("t", faults, intensities);
        p.window_s = 6.0;
        p.timeouts_s = vec![2.0];
        p
    }

    fn sim_for(p: &ExperimentPlan) -> SimCluster {
        build_cluster(p.resolved_profile().unwrap(), p.deployment_mode, p.seed).unwrap()
    }

    fn phases(r: &ExperimentResult) -> Vec<Phase> {
        let mut v: Vec<Phase> = r.phase_log.iter().map(|e| e.phase).collect();
        v.dedup();
        v
    }

    #[test]
    fn nominal_case_runs_all_phases() {
        let p = plan(&[FaultAction::NetworkDelay], &[25]);
        let cases = expand_campaign(&p).unwrap();
        let mut b = sim_for(&p);
        let r = run_experiment(&cases[0], &mut b, &RunnerConfig::from_plan(&p), None, &mut |_| {});
        assert_eq!(r.status, ExperimentStatus::Completed);
        assert_eq!(phases(&r), [Phase::P1, Phase::P2, Phase::P3, Phase::P4, Phase::P5]);
        assert_eq!(Some(r.records.len()), r.planned_arrivals);
        assert!(b.state().active_faults.is_empty());
        // 6 s window, 3 s windows back to back: two activations
        assert_eq!(r.fault_applies, 2);
        let first_send = r.load_start_ms.unwrap() + r.records[0].send_ts_ms;
        assert!(r.fault_on_ts_ms.unwrap() <= first_send);
    }

    #[test]
    fn apply_retries_are_logged() {
        let p = plan(&[FaultAction::CpuStress], &[50]);
        let cases = expand_campaign(&p).unwrap();
        let mut b = sim_for(&p);
        b.reject_next_applies(2);
        let r = run_experiment(&cases[0], &mut b, &RunnerConfig::from_plan(&p), None, &mut |_| {});
        assert_eq!(r.status, ExperimentStatus::Completed);
        let retries: Vec<_> = r.phase_log.iter().filter(|e| e.phase == Phase::P2 && e.event == "retry").collect();
        assert_eq!(retries.len(), 2);
    }

    #[test]
    fn apply_exhaustion_aborts() {
        let p = plan(&[FaultAction::CpuStress], &[50]);
        let cases = expand_campaign(&p).unwrap();
        let mut b = sim_for(&p);
        b.reject_next_applies(3);
        let r = run_experiment(&cases[0], &mut b, &RunnerConfig::from_plan(&p), None, &mut |_| {});
        assert_eq!(r.status, ExperimentStatus::Aborted(AbortReason::FaultApply));
        assert!(!r.halts_campaign);
        assert!(r.records.is_empty());
    }

    #[test]
    fn never_healthy_cluster() {
        let p = plan(&[FaultAction::NetworkDelay], &[25]);
        let cases = expand_campaign(&p).unwrap();
        let mut b = sim_for(&p);
        b.degrade_node("cloud-0", None).unwrap();
        let cfg = RunnerConfig {
            health_max_attempts: 4,
            ..RunnerConfig::from_plan(&p)
        };
        let r = run_experiment(&cases[0], &mut b, &cfg, None, &mut |_| {});
        assert_eq!(r.status, ExperimentStatus::Aborted(AbortReason::UnhealthyPrecondition));
        assert_eq!(b.stats().apply_calls, 0);
        assert_eq!(b.stats().node_status_calls, 4);
    }

    #[test]
    fn recovery_failure_halts_campaign() {
        let mut p = plan(&[FaultAction::CpuStress], &[25, 50, 75, 100]);
        p.window_s = 4.0;
        let cases = expand_campaign(&p).unwrap();
        let mut b = sim_for(&p);
        let cfg = RunnerConfig {
            health_max_attempts: 2,
            health_interval_ms: 1000.0,
            stabilization_s: 0.0,
            ..RunnerConfig::from_plan(&p)
        };
        // Poison recovery of the second case: a node that goes down during
        // its load window and never returns.
        struct Poison<'a> {
            inner: &'a mut SimCluster,
            trip_at_ms: f64,
            tripped: bool,
        }
        impl ClusterBackend for Poison<'_> {
            fn now_ms(&self) -> f64 {
                self.inner.now_ms()
            }
            fn advance_to(&mut self, t: f64) -> Result<(), BackendError> {
                self.inner.advance_to(t)?;
                if !self.tripped && t >= self.trip_at_ms {
                    self.tripped = true;
                    self.inner.degrade_node("cloud-2", None)?;
                }
                Ok(())
            }
            fn node_statuses(&mut self) -> Result<Vec<crate::backend::NodeStatus>, BackendError> {
                self.inner.node_statuses()
            }
            fn pod_statuses(&mut self, ns: &str) -> Result<Vec<crate::backend::PodStatus>, BackendError> {
                self.inner.pod_statuses(ns)
            }
            fn active_fault_schedules(&mut self) -> Result<Vec<FaultHandle>, BackendError> {
                self.inner.active_fault_schedules()
            }
            fn apply_fault(&mut self, s: &crate::fault::FaultSpec) -> Result<FaultHandle, BackendError> {
                self.inner.apply_fault(s)
            }
            fn remove_fault(&mut self, h: &FaultHandle) -> Result<(), BackendError> {
                self.inner.remove_fault(h)
            }
            fn restart_deployments(&mut self, ns: &str) -> Result<Vec<crate::backend::RestartTicket>, BackendError> {
                self.inner.restart_deployments(ns)
            }
            fn send_request(
                &mut self,
                t: &crate::backend::ServiceTopology,
                s: f64,
            ) -> Result<crate::backend::RequestOutcome, BackendError> {
                self.inner.send_request(t, s)
            }
        }

        // Run case 0 alone to learn when case 1's load window starts.
        let mut probe = sim_for(&p);
        let r0 = run_experiment(&cases[0], &mut probe, &cfg, None, &mut |_| {});
        let case1_start = probe.now_ms();
        assert!(r0.is_completed());

        let mut poisoned = Poison {
            inner: &mut b,
            trip_at_ms: case1_start + 1000.0,
            tripped: false,
        };
        let c = run_cases(&p, &cases, &mut poisoned, &cfg, &mut NullSink).unwrap();
        assert_eq!(c.results.len(), 2);
        assert_eq!(c.aborted_cases.len(), 1);
        assert_eq!(c.aborted_cases[0].reason, AbortReason::Recovery);
        assert_eq!(c.unrun_cases.len(), 2);
        assert!(c.halted);
        assert_eq!(c.results.len() + c.unrun_cases.len(), c.expanded);
        assert!((c.experiment_failure_rate() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn campaign_health_validation_count() {
        let p = plan(&[FaultAction::NetworkLoss], &[25, 50, 75, 100]);
        let mut sink = NullSink;
        let c = run_campaign(&p, |p| build_cluster(p.resolved_profile().map_err(BackendError::InvalidProfile)?, p.deployment_mode, p.seed), &mut sink).unwrap();
        assert_eq!(c.results.len(), 4);
        assert!(c.all_completed());
        let checks: usize = c
            .results
            .iter()
            .map(|r| r.phase_log.iter().filter(|e| e.event == "health_check").count())
            .sum();
        assert!(checks >= 5);
        assert_eq!(c.zscores.rows.len(), 4);
    }
}
