//! Per-experiment aggregates, baseline z-scores and fault-window correlation.

pub mod output;
pub mod patterns;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{DeploymentMode, Topology};
use crate::config::ExperimentCase;
use crate::fault::{FaultAction, FaultTimeline};
use crate::load::{RequestRecord, WorkloadMode};
use crate::stats::{self, ZScore};

/// Deviation floor below which a baseline is degenerate, in ms.
pub const SIGMA_EPSILON: f64 = 1e-9;
pub const P95: u32 = 95;
pub const DEFAULT_BASELINE_INTENSITY: u32 = 25;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("no request records to summarize")]
    EmptyRecords,
    #[error("missing baseline for group `{0}`")]
    MissingBaseline(String),
    #[error("baseline for group `{0}` has no successful requests")]
    EmptyBaseline(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub total: u64,
    pub failed: u64,
    pub failure_rate: f64,
    /// Failed requests count at the full timeout budget.
    pub mean_rt_ms: f64,
    pub mean_rt_success_ms: Option<f64>,
    /// Nearest-rank 95th percentile of successful latencies.
    pub p95_ms: Option<f64>,
    pub error_histogram: BTreeMap<String, u64>,
}

pub fn successful_latencies(records: &[RequestRecord]) -> Vec<f64> {
    records.iter().filter_map(|r| r.latency_ms).collect()
}

pub fn summarize(records: &[RequestRecord], timeout_s: f64) -> Result<MetricsSummary, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::EmptyRecords);
    }
    let budget = timeout_s * 1000.0;
    let ok = successful_latencies(records);
    let total = records.len() as u64;
    let failed = total - ok.len() as u64;
    let mut error_histogram = BTreeMap::new();
    for r in records.iter().filter(|r| !r.is_success()) {
        let class = r.error_class.clone().unwrap_or_else(|| "UNKNOWN".to_string());
        *error_histogram.entry(class).or_insert(0) += 1;
    }
    let all_rt: Vec<f64> = records.iter().map(|r| r.latency_ms.unwrap_or(budget)).collect();
    Ok(MetricsSummary {
        total,
        failed,
        failure_rate: failed as f64 / total as f64,
        mean_rt_ms: stats::mean(&all_rt).expect("non-empty"),
        mean_rt_success_ms: stats::mean(&ok),
        p95_ms: stats::nearest_rank(&ok, P95),
        error_histogram,
    })
}

/// Configuration coordinates of one experiment, as they appear in summary.csv.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseKey {
    pub case_id: String,
    pub fault_type: FaultAction,
    pub intensity: u32,
    pub mode: WorkloadMode,
    pub threads: u32,
    pub timeout_s: f64,
    pub deployment_mode: DeploymentMode,
    pub topology: Topology,
}

impl CaseKey {
    pub fn from_case(case: &ExperimentCase) -> Self {
        Self {
            case_id: case.case_id.clone(),
            fault_type: case.fault.action,
            intensity: case.intensity,
            mode: case.workload.mode,
            threads: case.workload.threads,
            timeout_s: case.workload.timeout_s,
            deployment_mode: case.deployment_mode,
            topology: case.topology,
        }
    }

    /// Everything but the intensity; cases sharing it are normalised against
    /// the same baseline.
    pub fn group_key(&self) -> String {
        format!(
            "{}|{}|{}|{}|t{}|to{}",
            self.fault_type, self.deployment_mode, self.topology, self.mode, self.threads, self.timeout_s
        )
    }
}

/// Summary plus the raw successful latencies of one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseSample {
    pub key: CaseKey,
    pub summary: MetricsSummary,
    pub success_latencies: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Baseline {
    pub group_key: String,
    pub intensity: u32,
    pub mu: f64,
    pub sigma: f64,
    pub samples: usize,
    pub degenerate: bool,
}

impl Baseline {
    pub fn zscore(&self) -> ZScore<f64> {
        ZScore::new(self.mu, self.sigma)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZRow {
    pub case_id: String,
    pub group_key: String,
    pub z_mean: Option<f64>,
    pub z_p95: Option<f64>,
    pub degenerate: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ZScoreTable {
    pub baselines: BTreeMap<String, Baseline>,
    pub rows: Vec<ZRow>,
}

/// Fits one baseline per group from the pooled successful latencies of its
/// cases at `baseline_intensity`.
pub fn fit_baselines(samples: &[CaseSample], baseline_intensity: u32) -> BTreeMap<String, Result<Baseline, MetricsError>> {
    let mut pools: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for s in samples.iter().filter(|s| s.key.intensity == baseline_intensity) {
        pools
            .entry(s.key.group_key())
            .or_default()
            .extend_from_slice(&s.success_latencies);
    }
    pools
        .into_iter()
        .map(|(g, pool)| {
            let fitted = ZScore::fit(&pool)
                .map(|z| Baseline {
                    group_key: g.clone(),
                    intensity: baseline_intensity,
                    mu: z.mean,
                    sigma: z.std_dev,
                    samples: pool.len(),
                    degenerate: z.is_degenerate(SIGMA_EPSILON),
                })
                .ok_or_else(|| MetricsError::EmptyBaseline(g.clone()));
            (g, fitted)
        })
        .collect()
}

/// Normalises every case's mean success latency and p95 against its group
/// baseline. With `strict`, a group without a usable baseline is an error;
/// otherwise its rows carry no z values.
pub fn zscore_normalize(samples: &[CaseSample], baseline_intensity: u32, strict: bool) -> Result<ZScoreTable, MetricsError> {
    let fitted = fit_baselines(samples, baseline_intensity);
    let mut table = ZScoreTable::default();
    for s in samples {
        let g = s.key.group_key();
        let baseline = match fitted.get(&g) {
            Some(Ok(b)) => Some(b),
            Some(Err(e)) if strict => return Err(e.clone()),
            None if strict => return Err(MetricsError::MissingBaseline(g)),
            _ => None,
        };
        let row = match baseline {
            Some(b) => {
                let z = b.zscore();
                ZRow {
                    case_id: s.key.case_id.clone(),
                    group_key: g,
                    z_mean: s.summary.mean_rt_success_ms.map(|x| z.normalize_guarded(x, SIGMA_EPSILON)),
                    z_p95: s.summary.p95_ms.map(|x| z.normalize_guarded(x, SIGMA_EPSILON)),
                    degenerate: b.degenerate,
                }
            }
            None => ZRow {
                case_id: s.key.case_id.clone(),
                group_key: g,
                z_mean: None,
                z_p95: None,
                degenerate: false,
            },
        };
        table.rows.push(row);
    }
    table.baselines = fitted
        .into_iter()
        .filter_map(|(g, b)| b.ok().map(|b| (g, b)))
        .collect();
    Ok(table)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowDegradation {
    pub index: usize,
    /// Window bounds relative to load start.
    pub on_ms: f64,
    pub off_ms: f64,
    pub records: usize,
    pub pre_mean_rt_ms: Option<f64>,
    pub in_mean_rt_ms: f64,
    pub amplification: Option<f64>,
    /// Delay from window start to the first in-window latency above `mu + 2 sigma`.
    pub onset_lag_ms: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct DegradationReport {
    pub windows: Vec<WindowDegradation>,
}

/// Compares mean success latency inside each activation window with the
/// equally long interval just before it. `timeline_offset_ms` is the
/// timeline origin relative to load start. Windows without successful
/// records are left out.
pub fn correlate_fault_windows(
    records: &[RequestRecord],
    timeline: &FaultTimeline,
    timeline_offset_ms: f64,
    baseline: Option<(f64, f64)>,
) -> DegradationReport {
    let mean_in = |lo: f64, hi: f64| {
        let xs: Vec<f64> = records
            .iter()
            .filter(|r| r.send_ts_ms >= lo && r.send_ts_ms < hi)
            .filter_map(|r| r.latency_ms)
            .collect();
        stats::mean(&xs).map(|m| (m, xs.len()))
    };
    let mut windows = Vec::new();
    for (index, a) in timeline.activations.iter().enumerate() {
        let on = a.on_ms + timeline_offset_ms;
        let off = a.off_ms + timeline_offset_ms;
        let Some((in_mean, n)) = mean_in(on, off) else { continue };
        let pre = mean_in(on - (off - on), on).map(|(m, _)| m);
        let onset_lag_ms = baseline.and_then(|(mu, sigma)| {
            let threshold = mu + 2.0 * sigma;
            records
                .iter()
                .filter(|r| r.send_ts_ms >= on && r.send_ts_ms < off)
                .find(|r| r.latency_ms.is_some_and(|l| l > threshold))
                .map(|r| r.send_ts_ms - on)
        });
        windows.push(WindowDegradation {
            index,
            on_ms: on,
            off_ms: off,
            records: n,
            pre_mean_rt_ms: pre,
            in_mean_rt_ms: in_mean,
            amplification: pre.filter(|p| *p > 0.0).map(|p| in_mean / p),
            onset_lag_ms,
        });
    }
    DegradationReport { windows }
}
