//! Experiment plans: parsing, validation and expansion into cases.
//!
//! A plan is a YAML document whose top-level keys are exactly those of
//! [`ExperimentPlan`]. Unknown keys are rejected. Expansion walks the
//! dimensions outer to inner as fault type, intensity, workload mode, thread
//! count, timeout.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

use crate::backend::{ClusterProfile, DeploymentMode, ServiceTopology, Topology};
use crate::fault::{FaultAction, FaultSpec, INTENSITY_LEVELS};
use crate::load::{WorkloadMode, WorkloadSpec};
use crate::retry::{OpKind, RetryPolicy};

pub const THREAD_LEVELS: [u32; 5] = [1, 2, 4, 8, 16];
pub const TIMEOUT_RANGE_S: (f64, f64) = (1.0, 10.0);

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// One step of the splitmix64 generator from state `x`.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of case `ordinal`: element `ordinal` of the splitmix64 stream
/// started at `plan_seed`.
pub fn case_seed(plan_seed: u64, ordinal: usize) -> u64 {
    splitmix64(plan_seed.wrapping_add((ordinal as u64).wrapping_mul(GOLDEN_GAMMA)))
}

/// Independent sub-seed for one consumer (`stream`) of a case seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    splitmix64(seed ^ splitmix64(stream))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Sim,
    #[serde(alias = "http")]
    Remote,
}

/// A preset name or an inline profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ClusterProfileRef {
    Preset(String),
    Inline(Box<ClusterProfile>),
}

impl Default for ClusterProfileRef {
    fn default() -> Self {
        ClusterProfileRef::Preset("four-node".to_string())
    }
}

impl ClusterProfileRef {
    pub fn resolve(&self) -> Result<ClusterProfile, String> {
        match self {
            ClusterProfileRef::Preset(name) => ClusterProfile::by_name(name).ok_or_else(|| {
                format!(
                    "unknown cluster_profile `{name}`; expected one of {}",
                    ClusterProfile::PRESETS.join(", ")
                )
            }),
            ClusterProfileRef::Inline(p) => Ok((**p).clone()),
        }
    }
}

fn default_fault_duration_s() -> f64 {
    3.0
}

fn default_trigger_every_s() -> f64 {
    3.0
}

/// A fault type with its activation timing. Accepts a bare action name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultEntry {
    pub action: FaultAction,
    #[serde(default = "default_fault_duration_s")]
    pub duration_s: f64,
    #[serde(default = "default_trigger_every_s")]
    pub trigger_every_s: f64,
}

impl FaultEntry {
    pub fn new(action: FaultAction) -> Self {
        Self {
            action,
            duration_s: default_fault_duration_s(),
            trigger_every_s: default_trigger_every_s(),
        }
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum FaultEntryForm {
    Name(FaultAction),
    Full(FaultEntryFull),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FaultEntryFull {
    action: FaultAction,
    #[serde(default = "default_fault_duration_s")]
    duration_s: f64,
    #[serde(default = "default_trigger_every_s")]
    trigger_every_s: f64,
}

fn de_fault_entries<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<FaultEntry>, D::Error> {
    let forms = Vec::<FaultEntryForm>::deserialize(d)?;
    Ok(forms
        .into_iter()
        .map(|f| match f {
            FaultEntryForm::Name(action) => FaultEntry::new(action),
            FaultEntryForm::Full(f) => FaultEntry {
                action: f.action,
                duration_s: f.duration_s,
                trigger_every_s: f.trigger_every_s,
            },
        })
        .collect())
}

fn default_rate() -> f64 {
    5.0
}
fn default_background_rps() -> f64 {
    1.0
}
fn default_burst_size() -> u32 {
    20
}
fn default_burst_every_s() -> f64 {
    30.0
}

/// A workload mode with its parameters. Accepts a bare mode name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadEntry {
    pub mode: WorkloadMode,
    #[serde(default = "default_rate")]
    pub rate_per_thread_rps: f64,
    #[serde(default = "default_background_rps")]
    pub background_rps_per_thread: f64,
    #[serde(default = "default_burst_size")]
    pub burst_size: u32,
    #[serde(default = "default_burst_every_s")]
    pub burst_every_s: f64,
}

impl WorkloadEntry {
    pub fn new(mode: WorkloadMode) -> Self {
        Self {
            mode,
            rate_per_thread_rps: default_rate(),
            background_rps_per_thread: default_background_rps(),
            burst_size: default_burst_size(),
            burst_every_s: default_burst_every_s(),
        }
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum WorkloadEntryForm {
    Name(WorkloadMode),
    Full(WorkloadEntryFull),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct WorkloadEntryFull {
    mode: WorkloadMode,
    #[serde(default = "default_rate")]
    rate_per_thread_rps: f64,
    #[serde(default = "default_background_rps")]
    background_rps_per_thread: f64,
    #[serde(default = "default_burst_size")]
    burst_size: u32,
    #[serde(default = "default_burst_every_s")]
    burst_every_s: f64,
}

fn de_workload_entries<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<WorkloadEntry>, D::Error> {
    let forms = Vec::<WorkloadEntryForm>::deserialize(d)?;
    Ok(forms
        .into_iter()
        .map(|f| match f {
            WorkloadEntryForm::Name(mode) => WorkloadEntry::new(mode),
            WorkloadEntryForm::Full(f) => WorkloadEntry {
                mode: f.mode,
                rate_per_thread_rps: f.rate_per_thread_rps,
                background_rps_per_thread: f.background_rps_per_thread,
                burst_size: f.burst_size,
                burst_every_s: f.burst_every_s,
            },
        })
        .collect())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetryPolicySet {
    pub request_send: RetryPolicy,
    pub fault_injection: RetryPolicy,
    pub load_generation: RetryPolicy,
    pub cluster_validation: RetryPolicy,
}

impl RetryPolicySet {
    pub fn get(&self, op: OpKind) -> &RetryPolicy {
        match op {
            OpKind::RequestSend => &self.request_send,
            OpKind::FaultInjection => &self.fault_injection,
            OpKind::LoadGeneration => &self.load_generation,
            OpKind::ClusterValidation => &self.cluster_validation,
        }
    }

    pub fn violations(&self) -> Vec<String> {
        [
            OpKind::RequestSend,
            OpKind::FaultInjection,
            OpKind::LoadGeneration,
            OpKind::ClusterValidation,
        ]
        .into_iter()
        .flat_map(|op| self.get(op).violations().into_iter().map(move |v| format!("retries.{op}: {v}")))
        .collect()
    }
}

fn default_topology() -> Topology {
    Topology::Monolith
}
fn default_deployment_mode() -> DeploymentMode {
    DeploymentMode::Cloud
}
fn default_workload_modes() -> Vec<WorkloadEntry> {
    vec![WorkloadEntry::new(WorkloadMode::Constant)]
}
fn default_thread_counts() -> Vec<u32> {
    vec![1]
}
fn default_timeouts() -> Vec<f64> {
    vec![5.0]
}
fn default_window_s() -> f64 {
    60.0
}
fn default_stabilization_s() -> f64 {
    30.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    pub name: String,
    #[serde(default)]
    pub backend: BackendKind,
    #[serde(default)]
    pub cluster_profile: ClusterProfileRef,
    #[serde(default = "default_topology")]
    pub topology: Topology,
    #[serde(default = "default_deployment_mode")]
    pub deployment_mode: DeploymentMode,
    #[serde(deserialize_with = "de_fault_entries")]
    pub fault_types: Vec<FaultEntry>,
    pub intensities: Vec<u32>,
    #[serde(default = "default_workload_modes", deserialize_with = "de_workload_entries")]
    pub workload_modes: Vec<WorkloadEntry>,
    #[serde(default = "default_thread_counts")]
    pub thread_counts: Vec<u32>,
    #[serde(default = "default_timeouts")]
    pub timeouts_s: Vec<f64>,
    #[serde(default = "default_window_s")]
    pub window_s: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub retries: RetryPolicySet,
    #[serde(default = "default_stabilization_s")]
    pub stabilization_s: f64,
}

impl ExperimentPlan {
    /// A plan with every optional key at its default.
    pub fn new(name: impl Into<String>, fault_types: &[FaultAction], intensities: &[u32]) -> Self {
        Self {
            name: name.into(),
            backend: BackendKind::default(),
            cluster_profile: ClusterProfileRef::default(),
            topology: default_topology(),
            deployment_mode: default_deployment_mode(),
            fault_types: fault_types.iter().copied().map(FaultEntry::new).collect(),
            intensities: intensities.to_vec(),
            workload_modes: default_workload_modes(),
            thread_counts: default_thread_counts(),
            timeouts_s: default_timeouts(),
            window_s: default_window_s(),
            seed: 0,
            retries: RetryPolicySet::default(),
            stabilization_s: default_stabilization_s(),
        }
    }

    /// Profile with deployments filled in for the plan's topology.
    pub fn resolved_profile(&self) -> Result<ClusterProfile, String> {
        Ok(self.cluster_profile.resolve()?.with_topology_deployments(self.topology))
    }

    pub fn case_count(&self) -> usize {
        self.fault_types.len()
            * self.intensities.len()
            * self.workload_modes.len()
            * self.thread_counts.len()
            * self.timeouts_s.len()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlanError {
    #[error("plan syntax error at line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("unknown plan key `{0}`")]
    UnknownKey(String),
    #[error("invalid plan: {}", .0.join("; "))]
    Invalid(Vec<String>),
}

fn dup_check<T: fmt::Display>(label: &str, items: impl IntoIterator<Item = T>, out: &mut Vec<String>) {
    let mut seen = BTreeSet::new();
    for item in items {
        let key = item.to_string();
        if !seen.insert(key.clone()) {
            out.push(format!("duplicate {label} `{key}`"));
        }
    }
}

fn is_identifier(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

pub fn validate_plan(plan: &ExperimentPlan) -> ValidationReport {
    let mut v = Vec::new();

    if !is_identifier(&plan.name) {
        v.push("name must be a non-empty identifier of [A-Za-z0-9._-]".to_string());
    }

    if plan.fault_types.is_empty() {
        v.push("fault_types must be non-empty".to_string());
    }
    dup_check("fault type", plan.fault_types.iter().map(|f| f.action), &mut v);
    for f in &plan.fault_types {
        if !(f.duration_s > 0.0) {
            v.push(format!("{}: duration_s must be > 0", f.action));
        }
        if !(f.trigger_every_s > 0.0) {
            v.push(format!("{}: trigger_every_s must be > 0", f.action));
        }
    }

    if plan.intensities.is_empty() {
        v.push("intensities must be non-empty".to_string());
    }
    if plan.intensities.iter().any(|i| !INTENSITY_LEVELS.contains(i)) {
        v.push("intensity must be one of {25,50,75,100}".to_string());
    }
    dup_check("intensity", plan.intensities.iter(), &mut v);

    if plan.workload_modes.is_empty() {
        v.push("workload_modes must be non-empty".to_string());
    }
    dup_check("workload mode", plan.workload_modes.iter().map(|w| w.mode), &mut v);
    for w in &plan.workload_modes {
        match w.mode {
            WorkloadMode::Constant if !(w.rate_per_thread_rps > 0.0) => {
                v.push("constant: rate_per_thread_rps must be > 0".to_string())
            }
            WorkloadMode::Piggyback => {
                if !(w.background_rps_per_thread > 0.0) {
                    v.push("piggyback: background_rps_per_thread must be > 0".to_string());
                }
                if !(w.burst_every_s > 0.0) {
                    v.push("piggyback: burst_every_s must be > 0".to_string());
                }
            }
            _ => {}
        }
    }

    if plan.thread_counts.is_empty() {
        v.push("thread_counts must be non-empty".to_string());
    }
    if plan.thread_counts.iter().any(|t| !THREAD_LEVELS.contains(t)) {
        v.push("thread count must be one of {1,2,4,8,16}".to_string());
    }
    dup_check("thread count", plan.thread_counts.iter(), &mut v);

    if plan.timeouts_s.is_empty() {
        v.push("timeouts_s must be non-empty".to_string());
    }
    let (lo, hi) = TIMEOUT_RANGE_S;
    if plan.timeouts_s.iter().any(|t| !(*t >= lo && *t <= hi)) {
        v.push("timeouts_s out of range [1,10]".to_string());
    }
    dup_check("timeout", plan.timeouts_s.iter(), &mut v);

    if !(plan.window_s > 0.0) || !plan.window_s.is_finite() {
        v.push("window_s must be > 0".to_string());
    }
    if !(plan.stabilization_s >= 0.0) || !plan.stabilization_s.is_finite() {
        v.push("stabilization_s must be ≥ 0".to_string());
    }

    match plan.topology {
        Topology::Chain(0) => v.push("hop count ≥ 1".to_string()),
        Topology::Chain(1) => v.push("chain topology needs hop count ≥ 2; use monolith for one hop".to_string()),
        _ => {}
    }

    v.extend(plan.retries.violations());

    match plan.resolved_profile() {
        Err(e) => v.push(e),
        Ok(profile) => {
            v.extend(profile.violations());
            if plan.topology.hop_count() >= 2 {
                if let Err(e) = ServiceTopology::resolve(plan.topology, &profile) {
                    v.push(e);
                }
            }
        }
    }

    ValidationReport { violations: v }
}

fn map_yaml_error(e: serde_yaml::Error) -> PlanError {
    let message = e.to_string();
    if let Some(rest) = message.strip_prefix("unknown field `") {
        if let Some(end) = rest.find('`') {
            return PlanError::UnknownKey(rest[..end].to_string());
        }
    }
    let (line, column) = e.location().map_or((0, 0), |l| (l.line(), l.column()));
    PlanError::Syntax { line, column, message }
}

/// Parses and validates a plan document.
pub fn parse_plan(text: &str) -> Result<ExperimentPlan, PlanError> {
    let plan: ExperimentPlan = serde_yaml::from_str(text).map_err(map_yaml_error)?;
    let report = validate_plan(&plan);
    if report.is_valid() {
        Ok(plan)
    } else {
        Err(PlanError::Invalid(report.violations))
    }
}

/// Writes a plan back out as YAML with every key explicit.
pub fn serialize_plan(plan: &ExperimentPlan) -> String {
    serde_yaml::to_string(plan).expect("plan serialization is infallible")
}

/// One cell of the campaign cross-product.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentCase {
    pub ordinal: usize,
    pub case_id: String,
    pub fault: FaultSpec,
    pub intensity: u32,
    pub workload: WorkloadSpec,
    pub deployment_mode: DeploymentMode,
    pub topology: Topology,
    pub service: ServiceTopology,
    pub seed: u64,
}

/// Sub-seed streams of a case seed.
pub mod streams {
    pub const TARGETS: u64 = 1;
    pub const BACKEND: u64 = 2;
    pub const ARRIVALS: u64 = 3;
}

fn fmt_seconds(s: f64) -> String {
    format!("{s}")
}

pub fn expand_campaign(plan: &ExperimentPlan) -> Result<Vec<ExperimentCase>, PlanError> {
    let report = validate_plan(plan);
    if !report.is_valid() {
        return Err(PlanError::Invalid(report.violations));
    }
    let profile = plan.resolved_profile().map_err(|e| PlanError::Invalid(vec![e]))?;
    let service = ServiceTopology::resolve(plan.topology, &profile).map_err(|e| PlanError::Invalid(vec![e]))?;
    let nodes = profile.node_names(plan.deployment_mode);

    let mut cases = Vec::with_capacity(plan.case_count());
    for fault in &plan.fault_types {
        for &intensity in &plan.intensities {
            for wl in &plan.workload_modes {
                for &threads in &plan.thread_counts {
                    for &timeout_s in &plan.timeouts_s {
                        let ordinal = cases.len();
                        let seed = case_seed(plan.seed, ordinal);
                        let spec = FaultSpec::for_case(
                            fault.action,
                            intensity,
                            fault.duration_s,
                            fault.trigger_every_s,
                            &service.hops,
                            &nodes,
                            derive_seed(seed, streams::TARGETS),
                        )
                        .map_err(|e| PlanError::Invalid(vec![format!("{}: {e}", fault.action)]))?;
                        let case_id = format!(
                            "{}-{ordinal:04}-{}-i{intensity}-{}-t{threads}-to{}",
                            plan.name,
                            fault.action,
                            wl.mode,
                            fmt_seconds(timeout_s)
                        );
                        cases.push(ExperimentCase {
                            ordinal,
                            case_id,
                            fault: spec,
                            intensity,
                            workload: WorkloadSpec::from_entry(wl, threads, timeout_s, plan.window_s),
                            deployment_mode: plan.deployment_mode,
                            topology: plan.topology,
                            service: service.clone(),
                            seed,
                        });
                    }
                }
            }
        }
    }
    Ok(cases)
}
