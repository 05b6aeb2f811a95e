//! The HTTP backend against a minimal in-process agent that serves a
//! simulated cluster, keeping the sim clock in step with wall time.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Instant;

use serde::Deserialize;
use serde_json::Value;

use resil_core::backend::remote::RemoteBackend;
use resil_core::backend::{
    build_cluster, BackendError, ClusterBackend, ClusterProfile, DeploymentMode, DeploymentSpec, FaultHandle,
    ServiceTopology, SimCluster, Topology,
};
use resil_core::config::{expand_campaign, ClusterProfileRef, ExperimentPlan};
use resil_core::fault::{FaultAction, FaultMagnitude, FaultSpec, TargetMode};
use resil_core::orchestrator::{run_experiment, ExperimentStatus, RunnerConfig};

struct Agent {
    sim: SimCluster,
    started: Instant,
    /// Statuses returned for the next calls, before any routing.
    injected: Vec<u16>,
}

#[derive(Deserialize)]
struct RequestBody {
    hops: Vec<String>,
    timeout_s: f64,
}

fn error_status(e: &BackendError) -> u16 {
    match e {
        BackendError::UnknownNamespace(_) => 404,
        BackendError::UnknownTarget(_) => 422,
        BackendError::ConfirmationTimeout(_) => 504,
        BackendError::Rejected(_) => 503,
        _ => 400,
    }
}

fn json<T: serde::Serialize>(r: Result<T, BackendError>) -> (u16, String) {
    match r {
        Ok(v) => (200, serde_json::to_string(&v).unwrap()),
        Err(e) => (error_status(&e), e.to_string()),
    }
}

impl Agent {
    fn handle(&mut self, method: &str, target: &str, body: &[u8]) -> (u16, String) {
        if !self.injected.is_empty() {
            return (self.injected.remove(0), "injected".to_string());
        }
        let now = self.started.elapsed().as_secs_f64() * 1000.0;
        if now > self.sim.now_ms() {
            self.sim.advance_to(now).unwrap();
        }
        let (path, query) = target.split_once('?').unwrap_or((target, ""));
        let ns = query.strip_prefix("ns=").unwrap_or("");
        match (method, path) {
            ("GET", "/nodes") => json(self.sim.node_statuses()),
            ("GET", "/pods") => json(self.sim.pod_statuses(ns)),
            ("GET", "/faults") => json(self.sim.active_fault_schedules()),
            ("POST", "/faults") => match serde_json::from_slice::<FaultSpec>(body) {
                Ok(spec) => json(self.sim.apply_fault(&spec)),
                Err(e) => (400, e.to_string()),
            },
            ("POST", "/restart") => json(self.sim.restart_deployments(ns)),
            ("POST", "/request") => {
                let b: RequestBody = serde_json::from_slice(body).unwrap();
                let topo = if b.hops.len() == 1 {
                    ServiceTopology::monolith(b.hops[0].clone())
                } else {
                    ServiceTopology::chain(b.hops).unwrap()
                };
                json(self.sim.send_request(&topo, b.timeout_s))
            }
            ("DELETE", p) if p.starts_with("/faults/") => {
                let id = &p["/faults/".len()..];
                let found = self.sim.active_fault_schedules().unwrap().into_iter().find(|h| h.id == id);
                match found {
                    Some(h) => json(self.sim.remove_fault(&h).map(|_| Value::Null)),
                    None => (200, String::new()),
                }
            }
            _ => (404, "no route".to_string()),
        }
    }
}

fn serve_one(agent: &Mutex<Agent>, stream: TcpStream) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut line = String::new();
    if reader.read_line(&mut line).unwrap_or(0) == 0 {
        return;
    }
    let mut parts = line.split_whitespace();
    let method = parts.next().unwrap_or("").to_string();
    let target = parts.next().unwrap_or("").to_string();
    let mut len = 0usize;
    loop {
        let mut h = String::new();
        reader.read_line(&mut h).unwrap();
        let h = h.trim_end();
        if h.is_empty() {
            break;
        }
        if let Some((k, v)) = h.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                len = v.trim().parse().unwrap();
            }
        }
    }
    let mut body = vec![0; len];
    reader.read_exact(&mut body).unwrap();
    let (status, text) = agent.lock().unwrap().handle(&method, &target, &body);
    let mut out = stream;
    let _ = write!(
        out,
        "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
        text.len()
    );
}

fn start_agent(sim: SimCluster) -> (String, Arc<Mutex<Agent>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let agent = Arc::new(Mutex::new(Agent {
        sim,
        started: Instant::now(),
        injected: Vec::new(),
    }));
    let shared = Arc::clone(&agent);
    thread::spawn(move || {
        for stream in listener.incoming().flatten() {
            serve_one(&shared, stream);
        }
    });
    (url, agent)
}

fn quick_profile() -> ClusterProfile {
    let mut p = ClusterProfile::four_node();
    let mut d = DeploymentSpec::new("monolith", 5.0);
    d.restart_delay_ms = 50.0;
    p.deployments = vec![d];
    p
}

fn sim() -> SimCluster {
    build_cluster(quick_profile(), DeploymentMode::Cloud, 9).unwrap()
}

#[test]
fn status_queries_round_trip() {
    let (url, _agent) = start_agent(sim());
    let mut b = RemoteBackend::new(&url).unwrap();
    let nodes = b.node_statuses().unwrap();
    assert_eq!(nodes.len(), 4);
    assert!(nodes.iter().all(|n| n.ready));
    let pods = b.pod_statuses("app").unwrap();
    assert_eq!(pods.len(), 1);
    assert!(pods[0].ready.is_full());
    assert!(b.active_fault_schedules().unwrap().is_empty());
    let out = b.send_request(&ServiceTopology::monolith("monolith"), 5.0).unwrap();
    assert!(out.latency_ms.is_some());
}

#[test]
fn fault_lifecycle_over_http() {
    let (url, _agent) = start_agent(sim());
    let mut b = RemoteBackend::new(&url).unwrap();
    let spec = FaultSpec {
        action: FaultAction::CpuStress,
        mode: TargetMode::FixedPercent,
        value: 100,
        targets: vec!["monolith".into()],
        duration_s: 3.0,
        trigger_every_s: 3.0,
        magnitude: FaultMagnitude::CpuFactor(2.0),
    };
    let h = b.apply_fault(&spec).unwrap();
    assert_eq!(b.active_fault_schedules().unwrap(), vec![h.clone()]);
    b.remove_fault(&h).unwrap();
    assert!(b.active_fault_schedules().unwrap().is_empty());
    let missing = FaultHandle {
        id: "fault-999".into(),
        ..h
    };
    b.remove_fault(&missing).unwrap();
}

#[test]
fn error_statuses_map_to_backend_errors() {
    let (url, agent) = start_agent(sim());
    let mut b = RemoteBackend::new(&url).unwrap();
    assert!(matches!(b.pod_statuses("nope"), Err(BackendError::UnknownNamespace(_))));
    let bad = FaultSpec {
        action: FaultAction::CpuStress,
        mode: TargetMode::FixedPercent,
        value: 100,
        targets: vec!["ghost".into()],
        duration_s: 3.0,
        trigger_every_s: 3.0,
        magnitude: FaultMagnitude::CpuFactor(2.0),
    };
    assert!(matches!(b.apply_fault(&bad), Err(BackendError::UnknownTarget(_))));

    agent.lock().unwrap().injected = vec![503, 504];
    let e = b.node_statuses().unwrap_err();
    assert!(matches!(e, BackendError::Rejected(_)) && e.is_retryable());
    assert!(matches!(b.node_statuses(), Err(BackendError::ConfirmationTimeout(_))));
    assert!(b.node_statuses().is_ok());
}

#[test]
fn unreachable_agent_is_transport_error() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let mut b = RemoteBackend::with_timeout(&format!("http://127.0.0.1:{port}"), 2.0).unwrap();
    assert!(matches!(b.node_statuses(), Err(BackendError::Transport(_))));
}

#[test]
fn experiment_runs_against_agent() {
    let (url, agent) = start_agent(sim());
    let mut b = RemoteBackend::new(&url).unwrap();
    let mut plan = ExperimentPlan::new("remote", &[FaultAction::CpuStress], &[50]);
    plan.cluster_profile = ClusterProfileRef::Inline(Box::new(quick_profile()));
    plan.topology = Topology::Monolith;
    plan.window_s = 1.0;
    plan.thread_counts = vec![2];
    plan.timeouts_s = vec![1.0];
    let cases = expand_campaign(&plan).unwrap();
    let cfg = RunnerConfig {
        health_interval_ms: 50.0,
        health_max_attempts: 40,
        stabilization_s: 0.05,
        ..RunnerConfig::from_plan(&plan)
    };
    let r = run_experiment(&cases[0], &mut b, &cfg, None, &mut |_| {});
    assert_eq!(r.status, ExperimentStatus::Completed, "{:#?}", r.phase_log);
    assert_eq!(Some(r.records.len()), r.planned_arrivals);
    assert!(r.records.iter().all(|x| x.is_success()));
    assert!(agent.lock().unwrap().sim.state().active_faults.is_empty());
}
