//! On-disk artifacts of a campaign.
//!
//! Floats are written with six decimals, infinities as `inf` / `-inf`, and
//! missing values as empty cells. Nothing time-of-day dependent is written,
//! so a sim campaign reproduces its files byte for byte.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{summarize, zscore_normalize, CaseKey, CaseSample, MetricsError, MetricsSummary, ZRow, ZScoreTable};
use crate::backend::{DeploymentMode, RequestStatus, Topology};
use crate::config::{ExperimentCase, ExperimentPlan};
use crate::load::{RequestRecord, WorkloadMode};
use crate::orchestrator::{CampaignResult, CampaignSink, ExperimentResult, PhaseEvent};

pub const REQUESTS_CSV: &str = "requests.csv";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const ZSCORES_CSV: &str = "zscores.csv";
pub const EVENTS_LOG: &str = "events.log";
pub const MANIFEST_JSON: &str = "manifest.json";

pub const REQUESTS_HEADER: [&str; 6] = ["experiment_id", "request_id", "send_ts_ms", "latency_ms", "outcome", "error_class"];
pub const SUMMARY_HEADER: [&str; 14] = [
    "case_id",
    "fault_type",
    "intensity",
    "mode",
    "threads",
    "timeout_s",
    "deployment_mode",
    "topology",
    "total",
    "failed",
    "failure_rate",
    "mean_rt_ms",
    "mean_rt_success_ms",
    "p95_ms",
];
pub const ZSCORES_HEADER: [&str; 5] = ["case_id", "group_key", "z_mean", "z_p95", "degenerate"];

/// Bumped whenever a file's columns or encoding change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaVersions {
    pub requests: u32,
    pub summary: u32,
    pub zscores: u32,
    pub events: u32,
    pub manifest: u32,
}

pub const SCHEMA_VERSIONS: SchemaVersions = SchemaVersions {
    requests: 1,
    summary: 1,
    zscores: 1,
    events: 1,
    manifest: 1,
};

#[derive(Debug, Error)]
pub enum OutputError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{path} line {line}: {message}")]
    Malformed { path: PathBuf, line: u64, message: String },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> OutputError + '_ {
    move |source| OutputError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> OutputError + '_ {
    move |source| OutputError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

impl From<OutputError> for io::Error {
    fn from(e: OutputError) -> Self {
        match e {
            OutputError::Io { source, .. } => source,
            other => io::Error::other(other.to_string()),
        }
    }
}

pub fn fmt_f64(x: f64) -> String {
    if x == f64::INFINITY {
        "inf".to_string()
    } else if x == f64::NEG_INFINITY {
        "-inf".to_string()
    } else {
        format!("{x:.6}")
    }
}

pub fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

pub fn parse_f64(s: &str) -> Option<f64> {
    match s {
        "inf" => Some(f64::INFINITY),
        "-inf" => Some(f64::NEG_INFINITY),
        _ => s.parse().ok().filter(|x: &f64| x.is_finite()),
    }
}

fn parse_opt(s: &str) -> Result<Option<f64>, String> {
    if s.is_empty() {
        Ok(None)
    } else {
        parse_f64(s).map(Some).ok_or_else(|| format!("bad number `{s}`"))
    }
}

fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w)
}

fn csv_reader(path: &Path) -> Result<csv::Reader<File>, OutputError> {
    let f = File::open(path).map_err(io_err(path))?;
    Ok(csv::ReaderBuilder::new().has_headers(true).from_reader(f))
}

fn check_header(path: &Path, rdr: &mut csv::Reader<File>, expected: &[&str]) -> Result<(), OutputError> {
    let h = rdr.headers().map_err(csv_err(path))?;
    if h.iter().ne(expected.iter().copied()) {
        return Err(OutputError::Malformed {
            path: path.to_path_buf(),
            line: 1,
            message: format!("expected header {}", expected.join(",")),
        });
    }
    Ok(())
}

pub fn request_row(r: &RequestRecord) -> [String; 6] {
    [
        r.experiment_id.clone(),
        r.request_id.to_string(),
        fmt_f64(r.send_ts_ms),
        fmt_opt(r.latency_ms),
        r.outcome.as_str().to_string(),
        r.error_class.clone().unwrap_or_default(),
    ]
}

pub fn summary_row(key: &CaseKey, s: &MetricsSummary) -> [String; 14] {
    [
        key.case_id.clone(),
        key.fault_type.to_string(),
        key.intensity.to_string(),
        key.mode.to_string(),
        key.threads.to_string(),
        fmt_f64(key.timeout_s),
        key.deployment_mode.to_string(),
        key.topology.to_string(),
        s.total.to_string(),
        s.failed.to_string(),
        fmt_f64(s.failure_rate),
        fmt_f64(s.mean_rt_ms),
        fmt_opt(s.mean_rt_success_ms),
        fmt_opt(s.p95_ms),
    ]
}

pub fn zscore_row(z: &ZRow) -> [String; 5] {
    [
        z.case_id.clone(),
        z.group_key.clone(),
        fmt_opt(z.z_mean),
        fmt_opt(z.z_p95),
        z.degenerate.to_string(),
    ]
}

#[derive(Serialize)]
struct EventLine<'a> {
    ts_ms: f64,
    phase: &'a str,
    event: &'a str,
    detail: &'a str,
}

/// One JSON object per event, without the trailing newline.
pub fn event_line(e: &PhaseEvent) -> String {
    serde_json::to_string(&EventLine {
        ts_ms: crate::load::quantize(e.ts_ms),
        phase: e.phase.as_str(),
        event: &e.event,
        detail: &e.detail,
    })
    .expect("event serialises")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbortedEntry {
    pub case_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: SchemaVersions,
    pub plan: serde_json::Value,
    pub seed: u64,
    pub expanded: usize,
    pub completed: Vec<String>,
    pub aborted: Vec<AbortedEntry>,
    pub unrun: Vec<String>,
    pub experiment_failure_rate: f64,
    pub halted: bool,
    pub files: Vec<String>,
}

impl Manifest {
    pub fn new(plan: &ExperimentPlan, campaign: &CampaignResult) -> Self {
        Self {
            schema: SCHEMA_VERSIONS,
            plan: serde_json::to_value(plan).expect("plan serialises"),
            seed: campaign.seed,
            expanded: campaign.expanded,
            completed: campaign
                .results
                .iter()
                .filter(|r| r.is_completed())
                .map(|r| r.case_id.clone())
                .collect(),
            aborted: campaign
                .aborted_cases
                .iter()
                .map(|a| AbortedEntry {
                    case_id: a.case_id.clone(),
                    reason: a.reason.to_string(),
                })
                .collect(),
            unrun: campaign.unrun_cases.clone(),
            experiment_failure_rate: campaign.experiment_failure_rate(),
            halted: campaign.halted,
            files: [REQUESTS_CSV, SUMMARY_CSV, ZSCORES_CSV, EVENTS_LOG, MANIFEST_JSON]
                .map(String::from)
                .to_vec(),
        }
    }
}

pub fn write_zscores(path: &Path, table: &ZScoreTable) -> Result<(), OutputError> {
    let f = File::create(path).map_err(io_err(path))?;
    let mut w = csv_writer(BufWriter::new(f));
    w.write_record(ZSCORES_HEADER).map_err(csv_err(path))?;
    for row in &table.rows {
        w.write_record(zscore_row(row)).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn write_manifest(path: &Path, manifest: &Manifest) -> Result<(), OutputError> {
    let mut s = serde_json::to_string_pretty(manifest).map_err(|source| OutputError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    s.push('\n');
    fs::write(path, s).map_err(io_err(path))
}

pub fn read_manifest(path: &Path) -> Result<Manifest, OutputError> {
    let s = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&s).map_err(|source| OutputError::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// Creates `dir` and its parents; `true` when anything was created.
pub fn ensure_dir(dir: &Path) -> Result<bool, OutputError> {
    if dir.is_dir() {
        return Ok(false);
    }
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    Ok(true)
}

/// Streams campaign output into a directory as experiments finish, so an
/// interrupted campaign leaves every completed experiment on disk.
pub struct DirSink {
    dir: PathBuf,
    created: bool,
    requests: Option<csv::Writer<BufWriter<File>>>,
    summary: Option<csv::Writer<BufWriter<File>>>,
    events: Option<BufWriter<File>>,
    plan: Option<ExperimentPlan>,
}

impl DirSink {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self, OutputError> {
        let dir = dir.into();
        let created = ensure_dir(&dir)?;
        Ok(Self {
            dir,
            created,
            requests: None,
            summary: None,
            events: None,
            plan: None,
        })
    }

    /// Whether the output directory did not exist before.
    pub fn created_dir(&self) -> bool {
        self.created
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn open_csv(&self, name: &str, header: &[&str]) -> Result<csv::Writer<BufWriter<File>>, OutputError> {
        let path = self.dir.join(name);
        let f = File::create(&path).map_err(io_err(&path))?;
        let mut w = csv_writer(BufWriter::new(f));
        w.write_record(header).map_err(csv_err(&path))?;
        Ok(w)
    }
}

fn closed(what: &str) -> io::Error {
    io::Error::other(format!("{what} written before begin"))
}

impl CampaignSink for DirSink {
    fn begin(&mut self, plan: &ExperimentPlan, _cases: &[ExperimentCase]) -> io::Result<()> {
        self.requests = Some(self.open_csv(REQUESTS_CSV, &REQUESTS_HEADER)?);
        self.summary = Some(self.open_csv(SUMMARY_CSV, &SUMMARY_HEADER)?);
        let path = self.dir.join(EVENTS_LOG);
        self.events = Some(BufWriter::new(File::create(&path)?));
        self.plan = Some(plan.clone());
        Ok(())
    }

    fn event(&mut self, event: &PhaseEvent) -> io::Result<()> {
        let w = self.events.as_mut().ok_or_else(|| closed(EVENTS_LOG))?;
        writeln!(w, "{}", event_line(event))
    }

    fn experiment(&mut self, result: &ExperimentResult) -> io::Result<()> {
        let req = self.requests.as_mut().ok_or_else(|| closed(REQUESTS_CSV))?;
        for r in &result.records {
            req.write_record(request_row(r))?;
        }
        req.flush()?;
        if let Some(s) = &result.summary {
            let sum = self.summary.as_mut().ok_or_else(|| closed(SUMMARY_CSV))?;
            sum.write_record(summary_row(&result.key, s))?;
            sum.flush()?;
        }
        if let Some(e) = self.events.as_mut() {
            e.flush()?;
        }
        Ok(())
    }

    fn finish(&mut self, campaign: &CampaignResult) -> io::Result<()> {
        if let Some(mut w) = self.requests.take() {
            w.flush()?;
        }
        if let Some(mut w) = self.summary.take() {
            w.flush()?;
        }
        if let Some(mut w) = self.events.take() {
            w.flush()?;
        }
        write_zscores(&self.dir.join(ZSCORES_CSV), &campaign.zscores)?;
        let plan = self.plan.take().ok_or_else(|| closed(MANIFEST_JSON))?;
        write_manifest(&self.dir.join(MANIFEST_JSON), &Manifest::new(&plan, campaign))?;
        Ok(())
    }
}

/// Writes every artifact of a finished campaign at once.
pub fn write_outputs(plan: &ExperimentPlan, campaign: &CampaignResult, dir: &Path) -> Result<Manifest, OutputError> {
    let mut sink = DirSink::new(dir)?;
    sink.begin(plan, &[]).map_err(io_err(dir))?;
    for e in &campaign.events {
        sink.event(e).map_err(io_err(dir))?;
    }
    for r in &campaign.results {
        sink.experiment(r).map_err(io_err(dir))?;
    }
    sink.finish(campaign).map_err(io_err(dir))?;
    Ok(Manifest::new(plan, campaign))
}

fn malformed(path: &Path, line: Option<&csv::Position>, message: impl Into<String>) -> OutputError {
    OutputError::Malformed {
        path: path.to_path_buf(),
        line: line.map_or(0, |p| p.line()),
        message: message.into(),
    }
}

pub fn read_requests(path: &Path) -> Result<Vec<RequestRecord>, OutputError> {
    let mut rdr = csv_reader(path)?;
    check_header(path, &mut rdr, &REQUESTS_HEADER)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err(path))?;
        let pos = rec.position();
        let bad = |m: &str| malformed(path, pos, m);
        let outcome = RequestStatus::parse(&rec[4]).ok_or_else(|| bad("unknown outcome"))?;
        out.push(RequestRecord {
            experiment_id: rec[0].to_string(),
            request_id: rec[1].parse().map_err(|_| bad("bad request_id"))?,
            send_ts_ms: parse_f64(&rec[2]).ok_or_else(|| bad("bad send_ts_ms"))?,
            latency_ms: parse_opt(&rec[3]).map_err(|m| bad(&m))?,
            outcome,
            error_class: (!rec[5].is_empty()).then(|| rec[5].to_string()),
        });
    }
    Ok(out)
}

/// One summary.csv row. The error histogram is not persisted.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub key: CaseKey,
    pub total: u64,
    pub failed: u64,
    pub failure_rate: f64,
    pub mean_rt_ms: f64,
    pub mean_rt_success_ms: Option<f64>,
    pub p95_ms: Option<f64>,
}

pub fn read_summary(path: &Path) -> Result<Vec<SummaryRow>, OutputError> {
    let mut rdr = csv_reader(path)?;
    check_header(path, &mut rdr, &SUMMARY_HEADER)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err(path))?;
        let pos = rec.position();
        let bad = |m: &str| malformed(path, pos, m);
        let num = |i: usize, name: &str| parse_f64(&rec[i]).ok_or_else(|| bad(&format!("bad {name}")));
        let int = |i: usize, name: &str| rec[i].parse::<u64>().map_err(|_| bad(&format!("bad {name}")));
        out.push(SummaryRow {
            key: CaseKey {
                case_id: rec[0].to_string(),
                fault_type: rec[1].parse().map_err(|_| bad("unknown fault_type"))?,
                intensity: int(2, "intensity")? as u32,
                mode: WorkloadMode::parse(&rec[3]).ok_or_else(|| bad("unknown mode"))?,
                threads: int(4, "threads")? as u32,
                timeout_s: num(5, "timeout_s")?,
                deployment_mode: DeploymentMode::parse(&rec[6]).ok_or_else(|| bad("unknown deployment_mode"))?,
                topology: Topology::parse(&rec[7]).ok_or_else(|| bad("unknown topology"))?,
            },
            total: int(8, "total")?,
            failed: int(9, "failed")?,
            failure_rate: num(10, "failure_rate")?,
            mean_rt_ms: num(11, "mean_rt_ms")?,
            mean_rt_success_ms: parse_opt(&rec[12]).map_err(|m| bad(&m))?,
            p95_ms: parse_opt(&rec[13]).map_err(|m| bad(&m))?,
        });
    }
    Ok(out)
}

pub fn read_zscores(path: &Path) -> Result<Vec<ZRow>, OutputError> {
    let mut rdr = csv_reader(path)?;
    check_header(path, &mut rdr, &ZSCORES_HEADER)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err(path))?;
        let pos = rec.position();
        let bad = |m: &str| malformed(path, pos, m);
        out.push(ZRow {
            case_id: rec[0].to_string(),
            group_key: rec[1].to_string(),
            z_mean: parse_opt(&rec[2]).map_err(|m| bad(&m))?,
            z_p95: parse_opt(&rec[3]).map_err(|m| bad(&m))?,
            degenerate: rec[4].parse().map_err(|_| bad("bad degenerate flag"))?,
        });
    }
    Ok(out)
}

/// Rebuilds per-case samples from a run directory: keys from summary.csv,
/// statistics recomputed from requests.csv.
pub fn load_samples(dir: &Path) -> Result<Vec<CaseSample>, OutputError> {
    let rows = read_summary(&dir.join(SUMMARY_CSV))?;
    let mut by_case: BTreeMap<String, Vec<RequestRecord>> = BTreeMap::new();
    for r in read_requests(&dir.join(REQUESTS_CSV))? {
        by_case.entry(r.experiment_id.clone()).or_default().push(r);
    }
    rows.into_iter()
        .map(|row| {
            let records = by_case.remove(&row.key.case_id).unwrap_or_default();
            let summary = summarize(&records, row.key.timeout_s)?;
            Ok(CaseSample {
                success_latencies: super::successful_latencies(&records),
                key: row.key,
                summary,
            })
        })
        .collect()
}

/// Recomputes z-scores from persisted records. Every group needs at least
/// one case at `baseline_intensity`.
pub fn analyze_dir(dir: &Path, baseline_intensity: u32) -> Result<ZScoreTable, OutputError> {
    let samples = load_samples(dir)?;
    let fitted = super::fit_baselines(&samples, baseline_intensity);
    for s in &samples {
        let g = s.key.group_key();
        if !fitted.contains_key(&g) {
            return Err(MetricsError::MissingBaseline(g).into());
        }
    }
    Ok(zscore_normalize(&samples, baseline_intensity, false)?)
}
