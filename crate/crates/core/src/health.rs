//! Cluster validation before and after experiments, and recovery restarts.

use serde::Serialize;
use thiserror::Error;

use crate::backend::{BackendError, ClusterBackend, ReadyFraction};

pub const DEFAULT_INTERVAL_MS: f64 = 5000.0;
pub const DEFAULT_MAX_ATTEMPTS: u32 = 60;
pub const DEFAULT_STABILIZATION_S: f64 = 30.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PodFailure {
    pub pod: String,
    pub ready_fraction: ReadyFraction,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HealthReport {
    pub healthy: bool,
    pub node_failures: Vec<String>,
    /// Ids of fault schedules still active.
    pub active_schedules: Vec<String>,
    pub pod_failures: Vec<PodFailure>,
    pub checked_at_ms: f64,
}

impl HealthReport {
    pub fn summary(&self) -> String {
        if self.healthy {
            return "healthy".to_string();
        }
        let mut parts = Vec::new();
        if !self.node_failures.is_empty() {
            parts.push(format!("nodes not ready: {}", self.node_failures.join(",")));
        }
        if !self.active_schedules.is_empty() {
            parts.push(format!("active schedules: {}", self.active_schedules.join(",")));
        }
        if !self.pod_failures.is_empty() {
            let pods: Vec<String> = self
                .pod_failures
                .iter()
                .map(|p| format!("{}={}", p.pod, p.ready_fraction))
                .collect();
            parts.push(format!("pods not ready: {}", pods.join(",")));
        }
        parts.join("; ")
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HealthError {
    #[error("cluster not healthy after {attempts} checks{}", .last.as_ref().map(|r| format!(": {}", r.summary())).unwrap_or_default())]
    Exhausted { attempts: u32, last: Option<HealthReport> },
    #[error("health check failed: {0}")]
    Backend(BackendError),
    #[error("interval_ms must be > 0 and max_attempts ≥ 1")]
    BadBounds,
}

/// One snapshot of node readiness, active fault schedules and pod readiness.
pub fn check_health<B: ClusterBackend + ?Sized>(backend: &mut B, namespace: &str) -> Result<HealthReport, BackendError> {
    let checked_at_ms = backend.now_ms();
    let node_failures: Vec<String> = backend
        .node_statuses()?
        .into_iter()
        .filter(|n| !n.ready)
        .map(|n| n.name)
        .collect();
    let active_schedules: Vec<String> = backend.active_fault_schedules()?.into_iter().map(|h| h.id).collect();
    let pod_failures: Vec<PodFailure> = backend
        .pod_statuses(namespace)?
        .into_iter()
        .filter(|p| !p.ready.is_full())
        .map(|p| PodFailure {
            pod: p.name,
            ready_fraction: p.ready,
        })
        .collect();
    Ok(HealthReport {
        healthy: node_failures.is_empty() && active_schedules.is_empty() && pod_failures.is_empty(),
        node_failures,
        active_schedules,
        pod_failures,
        checked_at_ms,
    })
}

pub fn await_healthy<B: ClusterBackend + ?Sized>(
    backend: &mut B,
    namespace: &str,
    interval_ms: f64,
    max_attempts: u32,
) -> Result<HealthReport, HealthError> {
    await_healthy_observed(backend, namespace, interval_ms, max_attempts, &mut |_, _| {})
}

/// Checks up to `max_attempts` times, `interval_ms` apart, and returns the
/// first healthy report. `on_check` sees every check with its 1-based
/// attempt number. A retryable backend error counts as an unhealthy check.
pub fn await_healthy_observed<B: ClusterBackend + ?Sized>(
    backend: &mut B,
    namespace: &str,
    interval_ms: f64,
    max_attempts: u32,
    on_check: &mut dyn FnMut(u32, &Result<HealthReport, BackendError>),
) -> Result<HealthReport, HealthError> {
    if !(interval_ms > 0.0) || max_attempts == 0 {
        return Err(HealthError::BadBounds);
    }
    let mut last = None;
    for attempt in 1..=max_attempts {
        if attempt > 1 {
            backend.wait_ms(interval_ms).map_err(HealthError::Backend)?;
        }
        let result = check_health(backend, namespace);
        on_check(attempt, &result);
        match result {
            Ok(report) if report.healthy => return Ok(report),
            Ok(report) => last = Some(report),
            Err(e) if e.is_retryable() => {}
            Err(e) => return Err(HealthError::Backend(e)),
        }
    }
    Err(HealthError::Exhausted {
        attempts: max_attempts,
        last,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeploymentRestart {
    pub deployment: String,
    pub completed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RestartReport {
    pub namespace: String,
    pub deployments: Vec<DeploymentRestart>,
    /// Fault schedules that were active during the restart.
    pub active_overlays: Vec<String>,
    pub started_ms: f64,
    pub finished_ms: f64,
}

/// Restarts every deployment in `namespace` at once and waits for the
/// slowest one.
pub fn restart_deployments<B: ClusterBackend + ?Sized>(
    backend: &mut B,
    namespace: &str,
) -> Result<RestartReport, BackendError> {
    let started_ms = backend.now_ms();
    let active_overlays: Vec<String> = backend.active_fault_schedules()?.into_iter().map(|h| h.id).collect();
    let tickets = backend.restart_deployments(namespace)?;
    let ready_at = tickets
        .iter()
        .filter_map(|t| t.ready_at_ms)
        .fold(started_ms, f64::max);
    backend.advance_to(ready_at)?;
    let pods = backend.pod_statuses(namespace)?;
    let deployments = tickets
        .into_iter()
        .map(|t| {
            let completed = pods
                .iter()
                .filter(|p| p.deployment == t.deployment)
                .all(|p| p.ready.is_full());
            DeploymentRestart {
                deployment: t.deployment,
                completed,
            }
        })
        .collect();
    Ok(RestartReport {
        namespace: namespace.to_string(),
        deployments,
        active_overlays,
        started_ms,
        finished_ms: backend.now_ms(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{build_cluster, ClusterProfile, DeploymentMode, DeploymentSpec, SimCluster, Topology};
    use crate::fault::{FaultAction, FaultMagnitude, FaultSpec, TargetMode};

    fn sim() -> SimCluster {
        let p = ClusterProfile::four_node().with_topology_deployments(Topology::Monolith);
        build_cluster(p, DeploymentMode::Cloud, 1).unwrap()
    }

    fn cpu_fault() -> FaultSpec {
        FaultSpec {
            action: FaultAction::CpuStress,
            mode: TargetMode::FixedPercent,
            value: 100,
            targets: vec!["monolith".into()],
            duration_s: 3.0,
            trigger_every_s: 3.0,
            magnitude: FaultMagnitude::CpuFactor(2.0),
        }
    }

    #[test]
    fn healthy_cluster() {
        let mut b = sim();
        let r = check_health(&mut b, "app").unwrap();
        assert!(r.healthy);
        assert_eq!(r.summary(), "healthy");
    }

    #[test]
    fn partial_pod_readiness() {
        let mut p = ClusterProfile::four_node();
        let mut d = DeploymentSpec::new("web", 10.0);
        d.containers = 3;
        p.deployments = vec![d];
        let mut b = build_cluster(p, DeploymentMode::Cloud, 1).unwrap();
        b.apply_fault(&FaultSpec {
            action: FaultAction::ContainerKill,
            magnitude: FaultMagnitude::None,
            targets: vec!["web".into()],
            ..cpu_fault()
        })
        .unwrap();
        let h = b.active_fault_schedules().unwrap().remove(0);
        b.remove_fault(&h).unwrap();
        let r = check_health(&mut b, "app").unwrap();
        assert!(!r.healthy);
        assert_eq!(r.pod_failures.len(), 1);
        assert_eq!(r.pod_failures[0].ready_fraction.to_string(), "2/3");
    }

    #[test]
    fn active_schedule_is_unhealthy() {
        let mut b = sim();
        let h = b.apply_fault(&cpu_fault()).unwrap();
        let r = check_health(&mut b, "app").unwrap();
        assert!(!r.healthy);
        assert_eq!(r.active_schedules, vec![h.id]);
    }

    #[test]
    fn heals_on_second_attempt() {
        let mut b = sim();
        b.degrade_node("cloud-0", Some(4000.0)).unwrap();
        let mut attempts = Vec::new();
        let r = await_healthy_observed(&mut b, "app", 5000.0, 10, &mut |a, _| attempts.push(a)).unwrap();
        assert!(r.healthy);
        assert_eq!(attempts, [1, 2]);
        assert_eq!(r.checked_at_ms, 5000.0);
    }

    #[test]
    fn exhaustion_after_max_attempts() {
        let mut b = sim();
        b.degrade_node("cloud-1", None).unwrap();
        let err = await_healthy(&mut b, "app", 5000.0, 3).unwrap_err();
        assert!(matches!(err, HealthError::Exhausted { attempts: 3, last: Some(_) }));
        assert_eq!(b.stats().node_status_calls, 3);
        assert_eq!(b.now_ms(), 10_000.0);
    }

    #[test]
    fn already_healthy_no_wait() {
        let mut b = sim();
        await_healthy(&mut b, "app", 5000.0, 3).unwrap();
        assert_eq!(b.now_ms(), 0.0);
    }

    #[test]
    fn parallel_restart() {
        let mut p = ClusterProfile::four_node();
        p.deployments = (0..3).map(|i| DeploymentSpec::new(format!("d{i}"), 10.0)).collect();
        let mut b = build_cluster(p, DeploymentMode::Cloud, 1).unwrap();
        let r = restart_deployments(&mut b, "app").unwrap();
        assert_eq!(r.finished_ms - r.started_ms, 2000.0);
        assert!(r.deployments.iter().all(|d| d.completed));
        assert!(check_health(&mut b, "app").unwrap().healthy);
    }

    #[test]
    fn empty_namespace_restart() {
        let mut p = ClusterProfile::four_node();
        p.namespaces.push("empty".into());
        let mut b = build_cluster(p, DeploymentMode::Cloud, 1).unwrap();
        let r = restart_deployments(&mut b, "empty").unwrap();
        assert!(r.deployments.is_empty());
        assert!(matches!(restart_deployments(&mut b, "missing"), Err(BackendError::UnknownNamespace(_))));
    }

    #[test]
    fn restart_during_fault_flags_overlay() {
        let mut b = sim();
        let h = b.apply_fault(&cpu_fault()).unwrap();
        let r = restart_deployments(&mut b, "app").unwrap();
        assert_eq!(r.active_overlays, vec![h.id.clone()]);
        assert!(!check_health(&mut b, "app").unwrap().healthy);
        b.remove_fault(&h).unwrap();
        assert!(check_health(&mut b, "app").unwrap().healthy);
    }
}
