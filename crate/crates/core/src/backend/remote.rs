//! JSON-over-HTTP backend for a real cluster agent.
//!
//! Endpoints, relative to the base URL:
//!
//! | call | method and path | body / response |
//! |---|---|---|
//! | node statuses | `GET /nodes` | `[NodeStatus]` |
//! | pod statuses | `GET /pods?ns=NS` | `[PodStatus]` |
//! | active faults | `GET /faults` | `[FaultHandle]` |
//! | apply fault | `POST /faults` | `FaultSpec` -> `FaultHandle` |
//! | remove fault | `DELETE /faults/{id}` | empty |
//! | restart | `POST /restart?ns=NS` | `[RestartTicket]` |
//! | send request | `POST /request` | `{hops, timeout_s}` -> `RequestOutcome` |
//!
//! Status mapping: 404 is an unknown namespace, 422 an unknown target, 504 a
//! confirmation timeout, other 5xx a retryable rejection and other 4xx a
//! protocol error. The clock is elapsed wall time since construction.

use std::thread;
use std::time::{Duration, Instant};

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::topology::ServiceTopology;
use super::{BackendError, ClusterBackend, FaultHandle, NodeStatus, PodStatus, RequestOutcome, RestartTicket};
use crate::fault::FaultSpec;

pub const DEFAULT_HTTP_TIMEOUT_S: f64 = 30.0;

pub struct RemoteBackend {
    base: String,
    agent: ureq::Agent,
    started: Instant,
}

#[derive(Serialize)]
struct RequestBody<'a> {
    hops: &'a [String],
    timeout_s: f64,
}

impl RemoteBackend {
    pub fn new(endpoint: &str) -> Result<Self, BackendError> {
        Self::with_timeout(endpoint, DEFAULT_HTTP_TIMEOUT_S)
    }

    pub fn with_timeout(endpoint: &str, http_timeout_s: f64) -> Result<Self, BackendError> {
        let base = endpoint.trim_end_matches('/').to_string();
        if !(base.starts_with("http://") || base.starts_with("https://")) {
            return Err(BackendError::Protocol(format!("endpoint must be an http(s) URL, got `{endpoint}`")));
        }
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs_f64(http_timeout_s.max(0.001))))
            .build()
            .into();
        Ok(Self {
            base,
            agent,
            started: Instant::now(),
        })
    }

    pub fn endpoint(&self) -> &str {
        &self.base
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    fn decode<T: DeserializeOwned>(
        &self,
        result: Result<ureq::http::Response<ureq::Body>, ureq::Error>,
        subject: &str,
    ) -> Result<T, BackendError> {
        let mut resp = result.map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            let body = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(map_status(status, subject, body.trim()));
        }
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let text = if text.trim().is_empty() { "null" } else { &text };
        serde_json::from_str(text).map_err(|e| BackendError::Protocol(format!("bad response body: {e}")))
    }
}

fn map_status(status: u16, subject: &str, body: &str) -> BackendError {
    let detail = if body.is_empty() {
        format!("{subject} (HTTP {status})")
    } else {
        format!("{subject} (HTTP {status}): {body}")
    };
    match status {
        404 => BackendError::UnknownNamespace(subject.to_string()),
        422 => BackendError::UnknownTarget(subject.to_string()),
        504 => BackendError::ConfirmationTimeout(detail),
        500..=599 => BackendError::Rejected(detail),
        _ => BackendError::Protocol(detail),
    }
}

impl ClusterBackend for RemoteBackend {
    fn now_ms(&self) -> f64 {
        self.started.elapsed().as_secs_f64() * 1000.0
    }

    fn advance_to(&mut self, t_ms: f64) -> Result<(), BackendError> {
        let dt = t_ms - self.now_ms();
        if dt > 0.0 {
            thread::sleep(Duration::from_secs_f64(dt / 1000.0));
        }
        Ok(())
    }

    fn node_statuses(&mut self) -> Result<Vec<NodeStatus>, BackendError> {
        self.decode(self.agent.get(self.url("/nodes")).call(), "nodes")
    }

    fn pod_statuses(&mut self, namespace: &str) -> Result<Vec<PodStatus>, BackendError> {
        let r = self.agent.get(self.url("/pods")).query("ns", namespace).call();
        self.decode(r, namespace)
    }

    fn active_fault_schedules(&mut self) -> Result<Vec<FaultHandle>, BackendError> {
        self.decode(self.agent.get(self.url("/faults")).call(), "faults")
    }

    fn apply_fault(&mut self, spec: &FaultSpec) -> Result<FaultHandle, BackendError> {
        let r = self.agent.post(self.url("/faults")).send_json(spec);
        self.decode(r, &spec.targets.join(","))
    }

    fn remove_fault(&mut self, handle: &FaultHandle) -> Result<(), BackendError> {
        let r = self.agent.delete(self.url(&format!("/faults/{}", handle.id))).call();
        self.decode::<serde_json::Value>(r, &handle.id).map(|_| ())
    }

    fn restart_deployments(&mut self, namespace: &str) -> Result<Vec<RestartTicket>, BackendError> {
        let r = self.agent.post(self.url("/restart")).query("ns", namespace).send_empty();
        self.decode(r, namespace)
    }

    fn send_request(&mut self, topology: &ServiceTopology, timeout_s: f64) -> Result<RequestOutcome, BackendError> {
        let body = RequestBody {
            hops: &topology.hops,
            timeout_s,
        };
        let r = self.agent.post(self.url("/request")).send_json(&body);
        self.decode(r, &topology.hops.join(","))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn status_mapping() {
        assert_eq!(map_status(404, "ns1", ""), BackendError::UnknownNamespace("ns1".into()));
        assert_eq!(map_status(422, "x", ""), BackendError::UnknownTarget("x".into()));
        assert!(matches!(map_status(504, "x", ""), BackendError::ConfirmationTimeout(_)));
        assert!(map_status(503, "x", "busy").is_retryable());
        assert!(!map_status(400, "x", "").is_retryable());
    }

    #[test]
    fn rejects_non_http_endpoint() {
        assert!(RemoteBackend::new("ftp://x").is_err());
        assert_eq!(RemoteBackend::new("http://h:1/").unwrap().endpoint(), "http://h:1");
    }
}
