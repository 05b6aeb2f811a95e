//! Cluster backends.
//!
//! [`ClusterBackend`] is the only surface the rest of the crate talks to.
//! Two implementations exist: [`sim::SimCluster`], a deterministic
//! discrete-event model of a cloud-edge cluster driven by a virtual clock,
//! and [`remote::RemoteBackend`], a JSON-over-HTTP adapter.

pub mod profile;
pub mod remote;
pub mod sim;
pub mod topology;

use std::fmt;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fault::{FaultAction, FaultSpec};
use crate::retry::Retryable;

pub use profile::{ClusterProfile, DeploymentMode, DeploymentSpec, LinkProfile};
pub use sim::{build_cluster, route_request, ClusterState, SimCluster};
pub use topology::{ServiceTopology, Topology, TopologyKind};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeStatus {
    pub name: String,
    pub ready: bool,
    pub is_edge: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PodPhase {
    Running,
    Restarting,
    Rescheduling,
    Gone,
}

/// `ready/total` container count of a pod.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReadyFraction {
    pub ready: u32,
    pub total: u32,
}

impl ReadyFraction {
    pub fn full(total: u32) -> Self {
        Self { ready: total, total }
    }

    pub fn is_full(&self) -> bool {
        self.ready == self.total
    }

    /// Parses the `r/t` form reported by cluster tooling.
    pub fn parse(s: &str) -> Option<Self> {
        let (r, t) = s.trim().split_once('/')?;
        let ready = r.trim().parse().ok()?;
        let total = t.trim().parse().ok()?;
        (ready <= total).then_some(Self { ready, total })
    }
}

impl fmt::Display for ReadyFraction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.ready, self.total)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PodStatus {
    pub name: String,
    pub deployment: String,
    pub namespace: String,
    pub node: String,
    pub phase: PodPhase,
    pub ready: ReadyFraction,
}

/// Confirmation that a fault is in effect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultHandle {
    pub id: String,
    pub action: FaultAction,
    pub on_ts_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartTicket {
    pub deployment: String,
    /// When the restarted pods are expected back, if the backend knows.
    pub ready_at_ms: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestStatus {
    Success,
    Timeout,
    ConnectionError,
    ServerError,
}

impl RequestStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            RequestStatus::Success => "success",
            RequestStatus::Timeout => "timeout",
            RequestStatus::ConnectionError => "connection_error",
            RequestStatus::ServerError => "server_error",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            RequestStatus::Success,
            RequestStatus::Timeout,
            RequestStatus::ConnectionError,
            RequestStatus::ServerError,
        ]
        .into_iter()
        .find(|st| st.as_str() == s)
    }

    pub fn is_success(self) -> bool {
        self == RequestStatus::Success
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestOutcome {
    pub status: RequestStatus,
    /// Present iff the request succeeded.
    pub latency_ms: Option<f64>,
    /// Index into the topology hops where the failure happened.
    pub failing_hop: Option<usize>,
    /// Time until the client observed the outcome; the timeout budget for timeouts.
    pub elapsed_ms: f64,
}

impl RequestOutcome {
    pub fn success(latency_ms: f64) -> Self {
        Self {
            status: RequestStatus::Success,
            latency_ms: Some(latency_ms),
            failing_hop: None,
            elapsed_ms: latency_ms,
        }
    }

    pub fn failure(status: RequestStatus, failing_hop: usize, elapsed_ms: f64) -> Self {
        debug_assert!(status != RequestStatus::Success);
        Self {
            status,
            latency_ms: None,
            failing_hop: Some(failing_hop),
            elapsed_ms,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BackendError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("backend rejected the operation: {0}")]
    Rejected(String),
    #[error("fault confirmation timed out: {0}")]
    ConfirmationTimeout(String),
    #[error("unknown target `{0}`")]
    UnknownTarget(String),
    #[error("unknown namespace `{0}`")]
    UnknownNamespace(String),
    #[error("invalid cluster profile: {0}")]
    InvalidProfile(String),
    #[error("protocol error: {0}")]
    Protocol(String),
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        matches!(
            self,
            BackendError::Transport(_) | BackendError::Rejected(_) | BackendError::ConfirmationTimeout(_)
        )
    }
}

impl Retryable for BackendError {
    fn is_retryable(&self) -> bool {
        BackendError::is_retryable(self)
    }
}

/// Everything the orchestrator needs from a cluster.
///
/// Time is in milliseconds on the backend's own monotonic clock: virtual
/// time for the simulator, elapsed wall time for remote clusters.
pub trait ClusterBackend {
    fn now_ms(&self) -> f64;

    /// Moves the clock to `t_ms` (no-op when already past it).
    fn advance_to(&mut self, t_ms: f64) -> Result<(), BackendError>;

    fn wait_ms(&mut self, ms: f64) -> Result<(), BackendError> {
        let t = self.now_ms() + ms.max(0.0);
        self.advance_to(t)
    }

    /// Reseeds any randomness; called once per experiment.
    fn reseed(&mut self, _seed: u64) {}

    fn node_statuses(&mut self) -> Result<Vec<NodeStatus>, BackendError>;
    fn pod_statuses(&mut self, namespace: &str) -> Result<Vec<PodStatus>, BackendError>;
    fn active_fault_schedules(&mut self) -> Result<Vec<FaultHandle>, BackendError>;
    fn apply_fault(&mut self, spec: &FaultSpec) -> Result<FaultHandle, BackendError>;
    fn remove_fault(&mut self, handle: &FaultHandle) -> Result<(), BackendError>;
    fn restart_deployments(&mut self, namespace: &str) -> Result<Vec<RestartTicket>, BackendError>;
    fn send_request(&mut self, topology: &ServiceTopology, timeout_s: f64) -> Result<RequestOutcome, BackendError>;
}

impl<B: ClusterBackend + ?Sized> ClusterBackend for Box<B> {
    fn now_ms(&self) -> f64 {
        (**self).now_ms()
    }
    fn advance_to(&mut self, t_ms: f64) -> Result<(), BackendError> {
        (**self).advance_to(t_ms)
    }
    fn wait_ms(&mut self, ms: f64) -> Result<(), BackendError> {
        (**self).wait_ms(ms)
    }
    fn reseed(&mut self, seed: u64) {
        (**self).reseed(seed)
    }
    fn node_statuses(&mut self) -> Result<Vec<NodeStatus>, BackendError> {
        (**self).node_statuses()
    }
    fn pod_statuses(&mut self, namespace: &str) -> Result<Vec<PodStatus>, BackendError> {
        (**self).pod_statuses(namespace)
    }
    fn active_fault_schedules(&mut self) -> Result<Vec<FaultHandle>, BackendError> {
        (**self).active_fault_schedules()
    }
    fn apply_fault(&mut self, spec: &FaultSpec) -> Result<FaultHandle, BackendError> {
        (**self).apply_fault(spec)
    }
    fn remove_fault(&mut self, handle: &FaultHandle) -> Result<(), BackendError> {
        (**self).remove_fault(handle)
    }
    fn restart_deployments(&mut self, namespace: &str) -> Result<Vec<RestartTicket>, BackendError> {
        (**self).restart_deployments(namespace)
    }
    fn send_request(&mut self, topology: &ServiceTopology, timeout_s: f64) -> Result<RequestOutcome, BackendError> {
        (**self).send_request(topology, timeout_s)
    }
}

/// Serialises calls from several threads onto one backend.
pub struct SharedBackend<B>(Arc<Mutex<B>>);

impl<B> Clone for SharedBackend<B> {
    fn clone(&self) -> Self {
        Self(Arc::clone(&self.0))
    }
}

impl<B: ClusterBackend> SharedBackend<B> {
    pub fn new(backend: B) -> Self {
        Self(Arc::new(Mutex::new(backend)))
    }

    pub fn with<T>(&self, f: impl FnOnce(&mut B) -> T) -> T {
        let mut guard = self.0.lock().unwrap_or_else(|e| e.into_inner());
        f(&mut guard)
    }
}

impl<B: ClusterBackend> ClusterBackend for SharedBackend<B> {
    fn now_ms(&self) -> f64 {
        self.with(|b| b.now_ms())
    }
    fn advance_to(&mut self, t_ms: f64) -> Result<(), BackendError> {
        self.with(|b| b.advance_to(t_ms))
    }
    fn reseed(&mut self, seed: u64) {
        self.with(|b| b.reseed(seed))
    }
    fn node_statuses(&mut self) -> Result<Vec<NodeStatus>, BackendError> {
        self.with(|b| b.node_statuses())
    }
    fn pod_statuses(&mut self, namespace: &str) -> Result<Vec<PodStatus>, BackendError> {
        self.with(|b| b.pod_statuses(namespace))
    }
    fn active_fault_schedules(&mut self) -> Result<Vec<FaultHandle>, BackendError> {
        self.with(|b| b.active_fault_schedules())
    }
    fn apply_fault(&mut self, spec: &FaultSpec) -> Result<FaultHandle, BackendError> {
        self.with(|b| b.apply_fault(spec))
    }
    fn remove_fault(&mut self, handle: &FaultHandle) -> Result<(), BackendError> {
        self.with(|b| b.remove_fault(handle))
    }
    fn restart_deployments(&mut self, namespace: &str) -> Result<Vec<RestartTicket>, BackendError> {
        self.with(|b| b.restart_deployments(namespace))
    }
    fn send_request(&mut self, topology: &ServiceTopology, timeout_s: f64) -> Result<RequestOutcome, BackendError> {
        self.with(|b| b.send_request(topology, timeout_s))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ready_fraction_parsing() {
        assert_eq!(ReadyFraction::parse("2/3"), Some(ReadyFraction { ready: 2, total: 3 }));
        assert_eq!(ReadyFraction::parse(" 3 / 3 ").map(|f| f.is_full()), Some(true));
        assert_eq!(ReadyFraction::parse("4/3"), None);
        assert_eq!(ReadyFraction::parse("x/3"), None);
        assert_eq!(ReadyFraction { ready: 2, total: 3 }.to_string(), "2/3");
    }

    #[test]
    fn retryability() {
        assert!(BackendError::Transport("x".into()).is_retryable());
        assert!(!BackendError::UnknownTarget("x".into()).is_retryable());
    }
}
