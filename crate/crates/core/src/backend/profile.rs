//! Cluster profiles: node counts, link characteristics and deployments.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::topology::Topology;

/// Where application pods run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeploymentMode {
    /// Every worker is a cloud node.
    Cloud,
    /// Some workers are edge nodes; application pods prefer them.
    CloudEdge,
}

impl DeploymentMode {
    pub fn as_str(self) -> &'static str {
        match self {
            DeploymentMode::Cloud => "cloud",
            DeploymentMode::CloudEdge => "cloud_edge",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [DeploymentMode::Cloud, DeploymentMode::CloudEdge]
            .into_iter()
            .find(|m| m.as_str() == s)
    }
}

impl fmt::Display for DeploymentMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkProfile {
    pub base_latency_ms: f64,
    /// Half-width of the uniform jitter, relative to the base latency.
    pub jitter_fraction: f64,
    pub drop_prob: f64,
    /// `None` means unlimited.
    #[serde(default)]
    pub bandwidth_mbps: Option<f64>,
}

impl LinkProfile {
    /// Datacenter link: 1 ms, no jitter, no loss, unlimited bandwidth.
    pub fn cloud_default() -> Self {
        Self {
            base_latency_ms: 1.0,
            jitter_fraction: 0.0,
            drop_prob: 0.0,
            bandwidth_mbps: None,
        }
    }

    /// Emulated edge link: 200 ms ±10 %, 10 % loss.
    pub fn edge_default() -> Self {
        Self {
            base_latency_ms: 200.0,
            jitter_fraction: 0.1,
            drop_prob: 0.1,
            bandwidth_mbps: None,
        }
    }

    pub fn latency_bounds(&self) -> (f64, f64) {
        let half = self.base_latency_ms * self.jitter_fraction;
        (self.base_latency_ms - half, self.base_latency_ms + half)
    }

    /// One-way latency, uniform in `base * (1 ± jitter)`.
    pub fn sample_latency<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.jitter_fraction == 0.0 {
            return self.base_latency_ms;
        }
        let (lo, hi) = self.latency_bounds();
        rng.gen_range(lo..=hi)
    }

    pub fn sample_drop<R: Rng + ?Sized>(&self, rng: &mut R) -> bool {
        sample_bernoulli(rng, self.drop_prob)
    }

    pub fn violations(&self, label: &str) -> Vec<String> {
        let mut out = Vec::new();
        if !(0.0..=1.0).contains(&self.drop_prob) {
            out.push(format!("{label}.drop_prob must be within [0,1]"));
        }
        if !(self.jitter_fraction >= 0.0) {
            out.push(format!("{label}.jitter_fraction must be ≥ 0"));
        }
        if !(self.base_latency_ms >= 0.0) {
            out.push(format!("{label}.base_latency_ms must be ≥ 0"));
        }
        if let Some(bw) = self.bandwidth_mbps {
            if !(bw > 0.0) {
                out.push(format!("{label}.bandwidth_mbps must be > 0"));
            }
        }
        out
    }
}

pub(crate) fn sample_bernoulli<R: Rng + ?Sized>(rng: &mut R, p: f64) -> bool {
    if p <= 0.0 {
        false
    } else if p >= 1.0 {
        true
    } else {
        rng.gen_bool(p)
    }
}

/// Time to push `bytes` through a link capped at `mbps`.
pub fn serialization_ms(bytes: u64, mbps: Option<f64>) -> f64 {
    match mbps {
        Some(rate) if rate > 0.0 => (bytes as f64 * 8.0) / (rate * 1_000_000.0) * 1000.0,
        _ => 0.0,
    }
}

fn default_namespace() -> String {
    "app".to_string()
}
fn one() -> u32 {
    1
}
fn default_service_time() -> f64 {
    50.0
}
fn default_service_jitter() -> f64 {
    0.1
}
fn default_restart_delay() -> f64 {
    2000.0
}
fn default_reschedule_delay() -> f64 {
    10_000.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeploymentSpec {
    pub name: String,
    #[serde(default = "default_namespace")]
    pub namespace: String,
    #[serde(default = "one")]
    pub replicas: u32,
    /// Containers per pod; the denominator of the readiness fraction.
    #[serde(default = "one")]
    pub containers: u32,
    #[serde(default = "default_service_time")]
    pub base_service_time_ms: f64,
    /// Uniform relative half-width applied to each service time sample.
    #[serde(default = "default_service_jitter")]
    pub service_jitter_fraction: f64,
    #[serde(default = "default_restart_delay")]
    pub restart_delay_ms: f64,
    #[serde(default = "default_reschedule_delay")]
    pub reschedule_delay_ms: f64,
}

impl DeploymentSpec {
    pub fn new(name: impl Into<String>, base_service_time_ms: f64) -> Self {
        Self {
            name: name.into(),
            namespace: default_namespace(),
            replicas: 1,
            containers: 1,
            base_service_time_ms,
            service_jitter_fraction: default_service_jitter(),
            restart_delay_ms: default_restart_delay(),
            reschedule_delay_ms: default_reschedule_delay(),
        }
    }
}

fn default_max_pods() -> u32 {
    16
}
fn default_node_kill_reschedule() -> f64 {
    15_000.0
}
fn default_rto() -> f64 {
    200.0
}
fn default_payload() -> u64 {
    256 * 1024
}
fn default_namespaces() -> Vec<String> {
    vec![default_namespace()]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterProfile {
    pub worker_nodes: u32,
    pub edge_nodes: u32,
    #[serde(default = "LinkProfile::edge_default")]
    pub edge_link: LinkProfile,
    #[serde(default = "LinkProfile::cloud_default")]
    pub cloud_link: LinkProfile,
    #[serde(default = "default_namespaces")]
    pub namespaces: Vec<String>,
    /// Empty means "derive from the topology".
    #[serde(default)]
    pub deployments: Vec<DeploymentSpec>,
    #[serde(default = "default_max_pods")]
    pub max_pods_per_node: u32,
    #[serde(default = "default_node_kill_reschedule")]
    pub node_kill_reschedule_ms: f64,
    /// Wait before a dropped message is sent again.
    #[serde(default = "default_rto")]
    pub retransmit_timeout_ms: f64,
    /// Bytes serialised per hop when a bandwidth cap applies.
    #[serde(default = "default_payload")]
    pub payload_bytes: u64,
}

impl ClusterProfile {
    fn preset(worker_nodes: u32, edge_nodes: u32) -> Self {
        Self {
            worker_nodes,
            edge_nodes,
            edge_link: LinkProfile::edge_default(),
            cloud_link: LinkProfile::cloud_default(),
            namespaces: default_namespaces(),
            deployments: Vec::new(),
            max_pods_per_node: default_max_pods(),
            node_kill_reschedule_ms: default_node_kill_reschedule(),
            retransmit_timeout_ms: default_rto(),
            payload_bytes: default_payload(),
        }
    }

    /// Four workers; three cloud plus one edge in hybrid mode.
    pub fn four_node() -> Self {
        Self::preset(4, 1)
    }

    /// Eight workers; five cloud plus three edge in hybrid mode.
    pub fn eight_node() -> Self {
        Self::preset(8, 3)
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "four-node" => Some(Self::four_node()),
            "eight-node" => Some(Self::eight_node()),
            _ => None,
        }
    }

    pub const PRESETS: [&'static str; 2] = ["four-node", "eight-node"];

    /// Fills in deployments for `topology` when none were given explicitly:
    /// a single `monolith`, or `svc-1..=svc-k` for a chain.
    pub fn with_topology_deployments(mut self, topology: Topology) -> Self {
        if self.deployments.is_empty() {
            self.deployments = match topology {
                Topology::Monolith => vec![DeploymentSpec::new("monolith", 50.0)],
                Topology::Chain(k) => (1..=k)
                    .map(|i| DeploymentSpec::new(format!("svc-{i}"), 25.0))
                    .collect(),
            };
        }
        for d in &self.deployments {
            if !self.namespaces.contains(&d.namespace) {
                self.namespaces.push(d.namespace.clone());
            }
        }
        self
    }

    /// Node names in placement order for `mode`.
    pub fn node_layout(&self, mode: DeploymentMode) -> Vec<(String, bool)> {
        let edge = match mode {
            DeploymentMode::Cloud => 0,
            DeploymentMode::CloudEdge => self.edge_nodes.min(self.worker_nodes),
        };
        let cloud = self.worker_nodes - edge;
        (0..cloud)
            .map(|i| (format!("cloud-{i}"), false))
            .chain((0..edge).map(|i| (format!("edge-{i}"), true)))
            .collect()
    }

    pub fn node_names(&self, mode: DeploymentMode) -> Vec<String> {
        self.node_layout(mode).into_iter().map(|(n, _)| n).collect()
    }

    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.worker_nodes < 1 {
            out.push("cluster_profile.worker_nodes must be ≥ 1".to_string());
        }
        if self.edge_nodes > self.worker_nodes {
            out.push("cluster_profile.edge_nodes must be ≤ worker_nodes".to_string());
        }
        out.extend(self.edge_link.violations("cluster_profile.edge_link"));
        out.extend(self.cloud_link.violations("cluster_profile.cloud_link"));
        if self.max_pods_per_node < 1 {
            out.push("cluster_profile.max_pods_per_node must be ≥ 1".to_string());
        }
        for d in &self.deployments {
            if d.replicas < 1 {
                out.push(format!("deployment {} replicas must be ≥ 1", d.name));
            }
            if d.containers < 1 {
                out.push(format!("deployment {} containers must be ≥ 1", d.name));
            }
            if !(d.base_service_time_ms >= 0.0) {
                out.push(format!("deployment {} base_service_time_ms must be ≥ 0", d.name));
            }
            if !(d.service_jitter_fraction >= 0.0 && d.service_jitter_fraction <= 1.0) {
                out.push(format!("deployment {} service_jitter_fraction must be within [0,1]", d.name));
            }
        }
        let total: u64 = self.deployments.iter().map(|d| u64::from(d.replicas)).sum();
        let capacity = u64::from(self.worker_nodes) * u64::from(self.max_pods_per_node);
        if total > capacity {
            out.push(format!(
                "{total} replicas exceed schedulable capacity of {capacity} pods"
            ));
        }
        out
    }
}
