//! Markdown report over a run directory.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::backend::{DeploymentMode, Topology};
use crate::fault::FaultAction;
use crate::metrics::output::{self, fmt_opt, Manifest, OutputError, SummaryRow};
use crate::metrics::patterns::{self, GroupSamples, PatternCheck, Verdict};
use crate::metrics::{CaseKey, ZRow};

pub const REPORT_MD: &str = "report.md";

struct Group {
    key: CaseKey,
    samples: GroupSamples,
}

impl Group {
    /// Workload coordinates shared by groups that may be compared.
    fn workload(&self) -> (String, u32, String) {
        (self.key.mode.to_string(), self.key.threads, output::fmt_f64(self.key.timeout_s))
    }
}

fn na(name: &'static str, detail: &str) -> PatternCheck {
    PatternCheck {
        name,
        intensity: None,
        verdict: Verdict::NotApplicable,
        detail: detail.to_string(),
    }
}

fn checks_for(fault: FaultAction, groups: &[&Group]) -> Vec<PatternCheck> {
    let is = |g: &&&Group, m: DeploymentMode| g.key.deployment_mode == m;
    let mut out = Vec::new();
    match fault {
        FaultAction::NetworkDelay => {
            for c in groups.iter().filter(|g| is(g, DeploymentMode::Cloud) && matches!(g.key.topology, Topology::Chain(_))) {
                for e in groups
                    .iter()
                    .filter(|g| is(g, DeploymentMode::CloudEdge) && g.key.topology == Topology::Monolith && g.workload() == c.workload())
                {
                    out.extend(patterns::delay_pattern(&c.samples, &e.samples));
                }
            }
            if out.is_empty() {
                out.push(na("delay", "needs a cloud chain group and an edge monolith group"));
            }
        }
        FaultAction::NetworkBandwidth => {
            for e in groups.iter().filter(|g| is(g, DeploymentMode::CloudEdge)) {
                for c in groups.iter().filter(|g| {
                    is(g, DeploymentMode::Cloud) && g.key.topology == e.key.topology && g.workload() == e.workload()
                }) {
                    out.extend(patterns::bandwidth_pattern(&e.samples, &c.samples));
                }
            }
            if out.is_empty() {
                out.push(na("bandwidth", "needs matching cloud and edge groups"));
            }
        }
        FaultAction::NetworkLoss => out.extend(groups.iter().map(|g| patterns::loss_pattern(&g.samples))),
        FaultAction::NetworkPartition => {
            for g in groups.iter().filter(|g| is(g, DeploymentMode::CloudEdge)) {
                out.extend(patterns::partition_pattern(&g.samples));
            }
            if out.is_empty() {
                out.push(na("partition", "needs an edge group"));
            }
        }
        _ => {}
    }
    out
}

/// Renders report.md from the artifacts in `dir`.
pub fn render_report(dir: &Path) -> Result<String, OutputError> {
    let manifest: Manifest = output::read_manifest(&dir.join(output::MANIFEST_JSON))?;
    let summary: Vec<SummaryRow> = output::read_summary(&dir.join(output::SUMMARY_CSV))?;
    let zrows: BTreeMap<String, ZRow> = output::read_zscores(&dir.join(output::ZSCORES_CSV))?
        .into_iter()
        .map(|z| (z.case_id.clone(), z))
        .collect();
    let samples = output::load_samples(dir)?;
    // z_var columns and pattern checks always use the default baseline.
    let baseline_intensity = crate::metrics::DEFAULT_BASELINE_INTENSITY;

    let mut groups: BTreeMap<String, Group> = BTreeMap::new();
    for s in &samples {
        groups
            .entry(s.key.group_key())
            .or_insert_with(|| Group {
                key: s.key.clone(),
                samples: GroupSamples::new(baseline_intensity),
            })
            .samples
            .add(s.key.intensity, &s.success_latencies);
    }

    let name = manifest.plan.get("name").and_then(|v| v.as_str()).unwrap_or("campaign");
    let mut md = String::new();
    let _ = writeln!(md, "# Resilience report: {name}\n");
    let _ = writeln!(md, "- seed: {}", manifest.seed);
    let _ = writeln!(md, "- expanded cases: {}", manifest.expanded);
    let _ = writeln!(md, "- completed: {}", manifest.completed.len());
    let _ = writeln!(md, "- aborted: {}", manifest.aborted.len());
    let _ = writeln!(md, "- not run: {}", manifest.unrun.len());
    let _ = writeln!(md, "- experiment failure rate: {:.6}", manifest.experiment_failure_rate);
    if manifest.halted {
        let _ = writeln!(md, "- campaign halted after a failed recovery");
    }
    let _ = writeln!(md, "- baseline intensity: {baseline_intensity}%");

    let mut faults: Vec<FaultAction> = summary.iter().map(|r| r.key.fault_type).collect();
    faults.sort_by_key(|f| f.as_str());
    faults.dedup();
    for fault in faults {
        let _ = writeln!(md, "\n## {fault}\n");
        let _ = writeln!(md, "| intensity | configuration | requests | mean_rt_ms | p95_ms | failure_rate | z_mean | z_var |");
        let _ = writeln!(md, "|---|---|---|---|---|---|---|---|");
        let mut rows: Vec<&SummaryRow> = summary.iter().filter(|r| r.key.fault_type == fault).collect();
        rows.sort_by(|a, b| {
            (a.key.group_key(), a.key.intensity, &a.key.case_id).cmp(&(b.key.group_key(), b.key.intensity, &b.key.case_id))
        });
        for r in rows {
            let g = r.key.group_key();
            let z = zrows.get(&r.key.case_id);
            let z_var = groups.get(&g).and_then(|gr| gr.samples.z_variance_at(r.key.intensity));
            let config = g.split('|').skip(1).collect::<Vec<_>>().join(" ");
            let _ = writeln!(
                md,
                "| {} | {} | {} | {} | {} | {} | {} | {} |",
                r.key.intensity,
                config,
                r.total,
                output::fmt_f64(r.mean_rt_ms),
                fmt_opt(r.p95_ms),
                output::fmt_f64(r.failure_rate),
                fmt_opt(z.and_then(|z| z.z_mean)),
                fmt_opt(z_var),
            );
        }
        let in_fault: Vec<&Group> = groups.values().filter(|g| g.key.fault_type == fault).collect();
        let checks = checks_for(fault, &in_fault);
        if !checks.is_empty() {
            let _ = writeln!(md, "\n### Pattern checks\n");
            let _ = writeln!(md, "| check | intensity | verdict | detail |");
            let _ = writeln!(md, "|---|---|---|---|");
            for c in checks {
                let i = c.intensity.map_or("all".to_string(), |i| i.to_string());
                let _ = writeln!(md, "| {} | {} | {} | {} |", c.name, i, c.verdict, c.detail);
            }
        }
    }

    if !manifest.aborted.is_empty() {
        let _ = writeln!(md, "\n## aborted\n");
        let _ = writeln!(md, "| case_id | reason |");
        let _ = writeln!(md, "|---|---|");
        for a in &manifest.aborted {
            let _ = writeln!(md, "| {} | {} |", a.case_id, a.reason);
        }
    }
    if !manifest.unrun.is_empty() {
        let _ = writeln!(md, "\n## not run\n");
        for u in &manifest.unrun {
            let _ = writeln!(md, "- {u}");
        }
    }
    Ok(md)
}

/// Writes report.md into `dir` and returns its path.
pub fn write_report(dir: &Path) -> Result<std::path::PathBuf, OutputError> {
    let md = render_report(dir)?;
    let path = dir.join(REPORT_MD);
    fs::write(&path, md).map_err(|source| OutputError::Io { path: path.clone(), source })?;
    Ok(path)
}
