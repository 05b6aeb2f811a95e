//! Deterministic simulated cloud-edge cluster.
//!
//! All state changes go through a virtual-time event queue owned by
//! [`SimCluster`]; there is no wall-clock dependence. Given the same profile,
//! seed and sequence of calls the event log and every request outcome are
//! bitwise identical.
//!
//! Request model: a request walks the topology hops outward from the client
//! and then back. Each traversal pays one link latency sample, the
//! serialisation time of the payload under any bandwidth cap, and any
//! injected delay of the sending pod. A dropped message is retransmitted
//! once after the retransmit timeout; a second drop loses the request, which
//! the client sees as a timeout. Each hop adds the service time of the pod
//! that handles it, scaled by CPU-stress overlays.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::profile::{sample_bernoulli, serialization_ms, ClusterProfile, DeploymentMode, DeploymentSpec, LinkProfile};
use super::topology::ServiceTopology;
use super::{
    BackendError, ClusterBackend, FaultHandle, NodeStatus, PodPhase, PodStatus, ReadyFraction, RequestOutcome,
    RequestStatus, RestartTicket,
};
use crate::fault::{FaultAction, FaultMagnitude, FaultSpec};

/// Relative half-width of the uniform jitter on injected delays.
pub const DELAY_JITTER_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct NodeState {
    pub ready: bool,
    pub is_edge: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PodState {
    pub deployment: String,
    pub namespace: String,
    pub node: String,
    pub phase: PodPhase,
    pub ready: ReadyFraction,
    generation: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActiveFault {
    pub handle: FaultHandle,
    pub spec: FaultSpec,
}

/// Snapshot of the simulated cluster.
#[derive(Debug, Clone)]
pub struct ClusterState {
    pub virtual_clock_ms: f64,
    pub nodes: BTreeMap<String, NodeState>,
    pub pods: BTreeMap<String, PodState>,
    /// Active faults in application order.
    pub active_faults: Vec<ActiveFault>,
    /// Disjoint node groups covering every node while a partition is active.
    pub partition_sets: Option<Vec<BTreeSet<String>>>,
    pub profile: ClusterProfile,
    pub mode: DeploymentMode,
}

#[derive(Clone, Copy)]
enum Endpoint<'a> {
    Client,
    Pod(&'a str),
}

#[derive(Debug)]
enum TraverseError {
    Partitioned,
    Lost,
}

impl ClusterState {
    fn deployment(&self, name: &str) -> Option<&DeploymentSpec> {
        self.profile.deployments.iter().find(|d| d.name == name)
    }

    pub fn is_edge_node(&self, node: &str) -> bool {
        self.nodes.get(node).is_some_and(|n| n.is_edge)
    }

    fn pod_node(&self, pod: &str) -> Option<&str> {
        self.pods.get(pod).map(|p| p.node.as_str())
    }

    fn targets_deployment<'a>(&'a self, deployment: &'a str) -> impl Iterator<Item = &'a ActiveFault> + 'a {
        self.active_faults
            .iter()
            .filter(move |f| !f.spec.action.targets_nodes() && f.spec.targets.iter().any(|t| t == deployment))
    }

    fn egress_delay_ms(&self, deployment: &str) -> f64 {
        self.targets_deployment(deployment)
            .map(|f| match f.spec.magnitude {
                FaultMagnitude::DelayMs(d) => d,
                _ => 0.0,
            })
            .sum()
    }

    fn egress_drop_prob(&self, deployment: &str) -> f64 {
        let keep = self.targets_deployment(deployment).fold(1.0, |acc, f| match f.spec.magnitude {
            FaultMagnitude::DropProb(p) => acc * (1.0 - p.clamp(0.0, 1.0)),
            _ => acc,
        });
        1.0 - keep
    }

    fn egress_bandwidth(&self, deployment: &str) -> Option<f64> {
        self.targets_deployment(deployment)
            .filter_map(|f| match f.spec.magnitude {
                FaultMagnitude::BandwidthMbps(b) => Some(b),
                _ => None,
            })
            .reduce(f64::min)
    }

    fn cpu_factor(&self, deployment: &str) -> f64 {
        self.targets_deployment(deployment)
            .map(|f| match f.spec.magnitude {
                FaultMagnitude::CpuFactor(c) => c,
                _ => 1.0,
            })
            .product()
    }

    fn partitioned(&self, a: &str, b: &str) -> bool {
        let Some(sets) = &self.partition_sets else {
            return false;
        };
        let group = |n: &str| sets.iter().position(|s| s.contains(n));
        match (group(a), group(b)) {
            (Some(x), Some(y)) => x != y,
            _ => false,
        }
    }

    fn link_between(&self, from: Endpoint<'_>, to: Endpoint<'_>) -> &LinkProfile {
        let edge = |e: Endpoint<'_>| match e {
            Endpoint::Client => false,
            Endpoint::Pod(p) => self.pod_node(p).is_some_and(|n| self.is_edge_node(n)),
        };
        if edge(from) || edge(to) {
            &self.profile.edge_link
        } else {
            &self.profile.cloud_link
        }
    }

    fn traverse<R: Rng + ?Sized>(&self, from: Endpoint<'_>, to: Endpoint<'_>, rng: &mut R) -> Result<f64, TraverseError> {
        if let (Endpoint::Pod(a), Endpoint::Pod(b)) = (from, to) {
            if let (Some(na), Some(nb)) = (self.pod_node(a), self.pod_node(b)) {
                if self.partitioned(na, nb) {
                    return Err(TraverseError::Partitioned);
                }
            }
        }
        let link = self.link_between(from, to);
        let (delay, loss, cap) = match from {
            Endpoint::Pod(p) => {
                let dep = self.pods[p].deployment.as_str();
                (self.egress_delay_ms(dep), self.egress_drop_prob(dep), self.egress_bandwidth(dep))
            }
            Endpoint::Client => (0.0, 0.0, None),
        };
        let drop = 1.0 - (1.0 - link.drop_prob.clamp(0.0, 1.0)) * (1.0 - loss);
        let bandwidth = match (link.bandwidth_mbps, cap) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        };
        let serialization = serialization_ms(self.profile.payload_bytes, bandwidth);
        let attempt = |rng: &mut R| {
            let mut t = link.sample_latency(rng) + serialization;
            if delay > 0.0 {
                let j = DELAY_JITTER_FRACTION;
                t += delay * rng.gen_range((1.0 - j)..=(1.0 + j));
            }
            t
        };
        let mut total = attempt(rng);
        if sample_bernoulli(rng, drop) {
            total += self.profile.retransmit_timeout_ms + attempt(rng);
            if sample_bernoulli(rng, drop) {
                return Err(TraverseError::Lost);
            }
        }
        Ok(total)
    }

    fn service_time<R: Rng + ?Sized>(&self, pod: &str, rng: &mut R) -> f64 {
        let dep_name = &self.pods[pod].deployment;
        let Some(dep) = self.deployment(dep_name) else {
            return 0.0;
        };
        let base = dep.base_service_time_ms * self.cpu_factor(dep_name);
        let j = dep.service_jitter_fraction;
        if j == 0.0 {
            base
        } else {
            base * rng.gen_range((1.0 - j)..=(1.0 + j))
        }
    }

    fn pick_running_pod<R: Rng + ?Sized>(&self, deployment: &str, rng: &mut R) -> Option<&str> {
        let running: Vec<&str> = self
            .pods
            .iter()
            .filter(|(_, p)| p.deployment == deployment && p.phase == PodPhase::Running)
            .map(|(n, _)| n.as_str())
            .collect();
        match running.len() {
            0 => None,
            1 => Some(running[0]),
            n => Some(running[rng.gen_range(0..n)]),
        }
    }

    fn any_pod_of(&self, deployment: &str) -> Option<&str> {
        self.pods
            .iter()
            .find(|(_, p)| p.deployment == deployment)
            .map(|(n, _)| n.as_str())
    }

    /// Least-loaded ready node with spare capacity, preferring edge nodes in
    /// hybrid mode and cloud nodes otherwise.
    fn place(&self, exclude_pod: Option<&str>) -> Option<String> {
        let prefer_edge = self.mode == DeploymentMode::CloudEdge && self.nodes.values().any(|n| n.is_edge);
        let cap = self.profile.max_pods_per_node as usize;
        let load = |node: &str| {
            self.pods
                .iter()
                .filter(|(name, p)| Some(name.as_str()) != exclude_pod && p.node == node && p.phase != PodPhase::Gone)
                .count()
        };
        let order = self.profile.node_layout(self.mode);
        let pick = |want_edge: Option<bool>| {
            order
                .iter()
                .filter(|(n, e)| want_edge.is_none_or(|w| w == *e) && self.nodes[n].ready && load(n) < cap)
                .min_by_key(|(n, _)| load(n))
                .map(|(n, _)| n.clone())
        };
        pick(Some(prefer_edge)).or_else(|| pick(None))
    }
}

/// Routes one request through `topology` against a fixed cluster snapshot.
pub fn route_request<R: Rng + ?Sized>(
    state: &ClusterState,
    topology: &ServiceTopology,
    timeout_s: f64,
    rng: &mut R,
) -> RequestOutcome {
    let budget = timeout_s * 1000.0;
    let timeout = |hop: usize| RequestOutcome::failure(RequestStatus::Timeout, hop, budget);
    let mut elapsed = 0.0;
    let mut chain: Vec<&str> = Vec::with_capacity(topology.hops.len());
    let mut prev = Endpoint::Client;

    for (i, dep) in topology.hops.iter().enumerate() {
        let Some(pod) = state.pick_running_pod(dep, rng) else {
            // No ready endpoint: the caller gets a refused connection; an
            // upstream service turns that into a 5xx.
            let status = if i == 0 {
                RequestStatus::ConnectionError
            } else {
                RequestStatus::ServerError
            };
            let rtt = state
                .any_pod_of(dep)
                .map(|p| 2.0 * state.link_between(prev, Endpoint::Pod(p)).base_latency_ms)
                .unwrap_or(0.0);
            return RequestOutcome::failure(status, i, (2.0 * elapsed + rtt).min(budget));
        };
        match state.traverse(prev, Endpoint::Pod(pod), rng) {
            Ok(t) => elapsed += t,
            Err(TraverseError::Partitioned | TraverseError::Lost) => return timeout(i),
        }
        elapsed += state.service_time(pod, rng);
        if elapsed > budget {
            return timeout(i);
        }
        chain.push(pod);
        prev = Endpoint::Pod(pod);
    }

    for i in (0..chain.len()).rev() {
        let to = if i == 0 { Endpoint::Client } else { Endpoint::Pod(chain[i - 1]) };
        match state.traverse(Endpoint::Pod(chain[i]), to, rng) {
            Ok(t) => elapsed += t,
            Err(_) => return timeout(i),
        }
        if elapsed > budget {
            return timeout(i);
        }
    }
    RequestOutcome::success(elapsed)
}

#[derive(Debug, Clone, PartialEq)]
pub enum SimEventKind {
    PodReady { pod: String, generation: u64 },
    PodRescheduled { pod: String, generation: u64 },
    NodeReady { node: String },
    /// No-op event, useful for exercising queue ordering.
    Marker(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimEvent {
    pub at_ms: f64,
    pub seq: u64,
    pub kind: SimEventKind,
}

impl Eq for SimEvent {}

impl Ord for SimEvent {
    // Reversed so BinaryHeap pops the earliest (time, seq) first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .at_ms
            .total_cmp(&self.at_ms)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

impl PartialOrd for SimEvent {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Call counters, mostly for tests.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SimStats {
    pub node_status_calls: u64,
    pub apply_calls: u64,
    pub applied: u64,
    pub remove_calls: u64,
    pub restart_calls: u64,
    pub requests: u64,
}

pub struct SimCluster {
    state: ClusterState,
    queue: BinaryHeap<SimEvent>,
    next_seq: u64,
    next_fault_id: u64,
    rng: ChaCha8Rng,
    log: Vec<String>,
    pending_rejections: u32,
    stats: SimStats,
}

/// Places every replica and returns a cluster at virtual time 0 with all
/// nodes ready and all pods running.
pub fn build_cluster(profile: ClusterProfile, mode: DeploymentMode, seed: u64) -> Result<SimCluster, BackendError> {
    let violations = profile.violations();
    if !violations.is_empty() {
        return Err(BackendError::InvalidProfile(violations.join("; ")));
    }
    let nodes = profile
        .node_layout(mode)
        .into_iter()
        .map(|(name, is_edge)| (name, NodeState { ready: true, is_edge }))
        .collect();
    let mut state = ClusterState {
        virtual_clock_ms: 0.0,
        nodes,
        pods: BTreeMap::new(),
        active_faults: Vec::new(),
        partition_sets: None,
        profile,
        mode,
    };
    let deployments = state.profile.deployments.clone();
    for dep in &deployments {
        for i in 0..dep.replicas {
            let node = state.place(None).ok_or_else(|| {
                BackendError::InvalidProfile(format!("no schedulable node for {}-{i}", dep.name))
            })?;
            state.pods.insert(
                format!("{}-{i}", dep.name),
                PodState {
                    deployment: dep.name.clone(),
                    namespace: dep.namespace.clone(),
                    node,
                    phase: PodPhase::Running,
                    ready: ReadyFraction::full(dep.containers),
                    generation: 0,
                },
            );
        }
    }
    Ok(SimCluster {
        state,
        queue: BinaryHeap::new(),
        next_seq: 0,
        next_fault_id: 0,
        rng: ChaCha8Rng::seed_from_u64(seed),
        log: Vec::new(),
        pending_rejections: 0,
        stats: SimStats::default(),
    })
}

impl SimCluster {
    pub fn state(&self) -> &ClusterState {
        &self.state
    }

    pub fn stats(&self) -> SimStats {
        self.stats
    }

    /// Every processed event and mutating call, in order.
    pub fn event_log(&self) -> &[String] {
        &self.log
    }

    pub fn pending_events(&self) -> usize {
        self.queue.len()
    }

    fn note(&mut self, what: String) {
        self.log.push(format!("{:.6} {what}", self.state.virtual_clock_ms));
    }

    pub fn schedule(&mut self, at_ms: f64, kind: SimEventKind) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(SimEvent { at_ms, seq, kind });
    }

    fn schedule_in(&mut self, delay_ms: f64, kind: SimEventKind) {
        self.schedule(self.state.virtual_clock_ms + delay_ms, kind);
    }

    /// Applies every queued event with timestamp `<= t_ms` in (time,
    /// insertion) order and moves the clock to `t_ms`.
    pub fn step_until(&mut self, t_ms: f64) -> Vec<SimEvent> {
        let mut processed = Vec::new();
        while self.queue.peek().is_some_and(|e| e.at_ms <= t_ms) {
            let ev = self.queue.pop().expect("peeked");
            if ev.at_ms > self.state.virtual_clock_ms {
                self.state.virtual_clock_ms = ev.at_ms;
            }
            if self.apply_event(&ev.kind) {
                processed.push(ev);
            }
        }
        if t_ms > self.state.virtual_clock_ms {
            self.state.virtual_clock_ms = t_ms;
        }
        processed
    }

    /// Returns false for stale events superseded by a newer pod generation.
    fn apply_event(&mut self, kind: &SimEventKind) -> bool {
        match kind {
            SimEventKind::PodReady { pod, generation } => {
                let Some(p) = self.state.pods.get(pod) else { return false };
                if p.generation != *generation {
                    return false;
                }
                let node_ready = self.state.nodes.get(&p.node).is_some_and(|n| n.ready);
                if node_ready {
                    let containers = p.ready.total;
                    let p = self.state.pods.get_mut(pod).expect("exists");
                    p.phase = PodPhase::Running;
                    p.ready = ReadyFraction::full(containers);
                    self.note(format!("pod {pod} ready"));
                } else {
                    let delay = self
                        .state
                        .deployment(&p.deployment)
                        .map_or(0.0, |d| d.reschedule_delay_ms);
                    let p = self.state.pods.get_mut(pod).expect("exists");
                    p.phase = PodPhase::Rescheduling;
                    p.ready.ready = 0;
                    let generation = p.generation;
                    self.note(format!("pod {pod} node down, rescheduling"));
                    self.schedule_in(delay, SimEventKind::PodRescheduled { pod: pod.clone(), generation });
                }
                true
            }
            SimEventKind::PodRescheduled { pod, generation } => {
                let Some(p) = self.state.pods.get(pod) else { return false };
                if p.generation != *generation {
                    return false;
                }
                match self.state.place(Some(pod)) {
                    Some(node) => {
                        let p = self.state.pods.get_mut(pod).expect("exists");
                        p.node = node.clone();
                        p.phase = PodPhase::Running;
                        p.ready = ReadyFraction::full(p.ready.total);
                        self.note(format!("pod {pod} rescheduled to {node}"));
                    }
                    None => {
                        let delay = self
                            .state
                            .deployment(&p.deployment)
                            .map_or(0.0, |d| d.reschedule_delay_ms);
                        self.note(format!("pod {pod} unschedulable, retrying"));
                        self.schedule_in(delay, SimEventKind::PodRescheduled { pod: pod.clone(), generation: *generation });
                    }
                }
                true
            }
            SimEventKind::NodeReady { node } => {
                let killed = self
                    .state
                    .active_faults
                    .iter()
                    .any(|f| f.spec.action == FaultAction::NodeKill && f.spec.targets.contains(node));
                if let Some(n) = self.state.nodes.get_mut(node) {
                    if !killed {
                        n.ready = true;
                    }
                }
                self.note(format!("node {node} ready"));
                true
            }
            SimEventKind::Marker(label) => {
                self.note(format!("marker {label}"));
                true
            }
        }
    }

    /// Marks a node NotReady, optionally recovering after `recover_after_ms`.
    pub fn degrade_node(&mut self, node: &str, recover_after_ms: Option<f64>) -> Result<(), BackendError> {
        let n = self
            .state
            .nodes
            .get_mut(node)
            .ok_or_else(|| BackendError::UnknownTarget(node.to_string()))?;
        n.ready = false;
        self.note(format!("node {node} degraded"));
        if let Some(after) = recover_after_ms {
            self.schedule_in(after, SimEventKind::NodeReady { node: node.to_string() });
        }
        Ok(())
    }

    /// Makes the next `n` apply calls fail with a retryable rejection.
    pub fn reject_next_applies(&mut self, n: u32) {
        self.pending_rejections = n;
    }

    fn restart_pod(&mut self, pod: &str, ready_containers: u32, delay_ms: f64) {
        let p = self.state.pods.get_mut(pod).expect("pod exists");
        p.generation += 1;
        p.phase = PodPhase::Restarting;
        p.ready.ready = ready_containers.min(p.ready.total);
        let generation = p.generation;
        self.schedule_in(delay_ms, SimEventKind::PodReady { pod: pod.to_string(), generation });
    }

    fn evict_pod(&mut self, pod: &str, delay_ms: f64) {
        let p = self.state.pods.get_mut(pod).expect("pod exists");
        p.generation += 1;
        p.phase = PodPhase::Rescheduling;
        p.ready.ready = 0;
        let generation = p.generation;
        self.schedule_in(delay_ms, SimEventKind::PodRescheduled { pod: pod.to_string(), generation });
    }

    fn pods_of(&self, deployments: &[String]) -> Vec<(String, DeploymentSpec)> {
        self.state
            .pods
            .iter()
            .filter(|(_, p)| deployments.contains(&p.deployment))
            .filter_map(|(n, p)| self.state.deployment(&p.deployment).map(|d| (n.clone(), d.clone())))
            .collect()
    }

    fn recompute_partition(&mut self) {
        let last = self
            .state
            .active_faults
            .iter()
            .rev()
            .find(|f| f.spec.action == FaultAction::NetworkPartition);
        self.state.partition_sets = last.map(|f| {
            let isolated: BTreeSet<String> = f.spec.targets.iter().cloned().collect();
            let rest: BTreeSet<String> = self
                .state
                .nodes
                .keys()
                .filter(|n| !isolated.contains(*n))
                .cloned()
                .collect();
            if rest.is_empty() {
                // Every node targeted: full fragmentation.
                isolated.into_iter().map(|n| BTreeSet::from([n])).collect()
            } else {
                vec![isolated, rest]
            }
        });
    }

    fn check_targets(&self, spec: &FaultSpec) -> Result<(), BackendError> {
        for t in &spec.targets {
            let known = if spec.action.targets_nodes() {
                self.state.nodes.contains_key(t)
            } else {
                self.state.deployment(t).is_some()
            };
            if !known {
                return Err(BackendError::UnknownTarget(t.clone()));
            }
        }
        Ok(())
    }
}

impl ClusterBackend for SimCluster {
    fn now_ms(&self) -> f64 {
        self.state.virtual_clock_ms
    }

    fn advance_to(&mut self, t_ms: f64) -> Result<(), BackendError> {
        self.step_until(t_ms);
        Ok(())
    }

    fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    fn node_statuses(&mut self) -> Result<Vec<NodeStatus>, BackendError> {
        self.stats.node_status_calls += 1;
        Ok(self
            .state
            .nodes
            .iter()
            .map(|(name, n)| NodeStatus {
                name: name.clone(),
                ready: n.ready,
                is_edge: n.is_edge,
            })
            .collect())
    }

    fn pod_statuses(&mut self, namespace: &str) -> Result<Vec<PodStatus>, BackendError> {
        if !self.state.profile.namespaces.iter().any(|n| n == namespace) {
            return Err(BackendError::UnknownNamespace(namespace.to_string()));
        }
        Ok(self
            .state
            .pods
            .iter()
            .filter(|(_, p)| p.namespace == namespace)
            .map(|(name, p)| PodStatus {
                name: name.clone(),
                deployment: p.deployment.clone(),
                namespace: p.namespace.clone(),
                node: p.node.clone(),
                phase: p.phase,
                ready: p.ready,
            })
            .collect())
    }

    fn active_fault_schedules(&mut self) -> Result<Vec<FaultHandle>, BackendError> {
        Ok(self.state.active_faults.iter().map(|f| f.handle.clone()).collect())
    }

    fn apply_fault(&mut self, spec: &FaultSpec) -> Result<FaultHandle, BackendError> {
        self.stats.apply_calls += 1;
        if self.pending_rejections > 0 {
            self.pending_rejections -= 1;
            self.note(format!("apply {} rejected", spec.action));
            return Err(BackendError::Rejected("fault controller busy".to_string()));
        }
        spec.validate().map_err(|e| BackendError::Protocol(e.to_string()))?;
        self.check_targets(spec)?;

        self.next_fault_id += 1;
        let handle = FaultHandle {
            id: format!("fault-{}", self.next_fault_id),
            action: spec.action,
            on_ts_ms: self.state.virtual_clock_ms,
        };
        match spec.action {
            FaultAction::ContainerKill => {
                for (pod, dep) in self.pods_of(&spec.targets) {
                    let phase = self.state.pods[&pod].phase;
                    if matches!(phase, PodPhase::Running | PodPhase::Restarting) {
                        let ready = self.state.pods[&pod].ready.total.saturating_sub(1);
                        self.restart_pod(&pod, ready, dep.restart_delay_ms);
                    }
                }
            }
            FaultAction::PodKill => {
                for (pod, dep) in self.pods_of(&spec.targets) {
                    self.evict_pod(&pod, dep.reschedule_delay_ms);
                }
            }
            FaultAction::NodeKill => {
                let delay = self.state.profile.node_kill_reschedule_ms;
                for node in &spec.targets {
                    if let Some(n) = self.state.nodes.get_mut(node) {
                        n.ready = false;
                    }
                    let victims: Vec<String> = self
                        .state
                        .pods
                        .iter()
                        .filter(|(_, p)| &p.node == node && p.phase != PodPhase::Gone)
                        .map(|(n, _)| n.clone())
                        .collect();
                    for pod in victims {
                        self.evict_pod(&pod, delay);
                    }
                }
            }
            FaultAction::NetworkDelay
            | FaultAction::NetworkLoss
            | FaultAction::NetworkBandwidth
            | FaultAction::NetworkPartition
            | FaultAction::CpuStress => {}
        }
        self.state.active_faults.push(ActiveFault {
            handle: handle.clone(),
            spec: spec.clone(),
        });
        self.recompute_partition();
        self.stats.applied += 1;
        self.note(format!("apply {} {} -> {}", handle.id, spec.action, spec.targets.join(",")));
        Ok(handle)
    }

    fn remove_fault(&mut self, handle: &FaultHandle) -> Result<(), BackendError> {
        self.stats.remove_calls += 1;
        let Some(idx) = self.state.active_faults.iter().position(|f| f.handle.id == handle.id) else {
            return Ok(());
        };
        let removed = self.state.active_faults.remove(idx);
        if removed.spec.action == FaultAction::NodeKill {
            for node in &removed.spec.targets {
                let still_killed = self
                    .state
                    .active_faults
                    .iter()
                    .any(|f| f.spec.action == FaultAction::NodeKill && f.spec.targets.contains(node));
                if let Some(n) = self.state.nodes.get_mut(node) {
                    if !still_killed {
                        n.ready = true;
                    }
                }
            }
        }
        self.recompute_partition();
        self.note(format!("remove {}", handle.id));
        Ok(())
    }

    fn restart_deployments(&mut self, namespace: &str) -> Result<Vec<RestartTicket>, BackendError> {
        self.stats.restart_calls += 1;
        if !self.state.profile.namespaces.iter().any(|n| n == namespace) {
            return Err(BackendError::UnknownNamespace(namespace.to_string()));
        }
        let deployments: Vec<DeploymentSpec> = self
            .state
            .profile
            .deployments
            .iter()
            .filter(|d| d.namespace == namespace)
            .cloned()
            .collect();
        let now = self.state.virtual_clock_ms;
        let mut tickets = Vec::with_capacity(deployments.len());
        for dep in deployments {
            let pods: Vec<String> = self
                .state
                .pods
                .iter()
                .filter(|(_, p)| p.deployment == dep.name)
                .map(|(n, _)| n.clone())
                .collect();
            for pod in pods {
                self.restart_pod(&pod, 0, dep.restart_delay_ms);
            }
            tickets.push(RestartTicket {
                deployment: dep.name.clone(),
                ready_at_ms: Some(now + dep.restart_delay_ms),
            });
        }
        self.note(format!("restart namespace {namespace}"));
        Ok(tickets)
    }

    fn send_request(&mut self, topology: &ServiceTopology, timeout_s: f64) -> Result<RequestOutcome, BackendError> {
        if let Some(missing) = topology.hops.iter().find(|h| self.state.deployment(h).is_none()) {
            return Err(BackendError::UnknownTarget(missing.clone()));
        }
        self.stats.requests += 1;
        Ok(route_request(&self.state, topology, timeout_s, &mut self.rng))
    }
}
