use std::io;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};

use resil_core::backend::remote::RemoteBackend;
use resil_core::backend::{build_cluster, ClusterBackend};
use resil_core::config::{expand_campaign, parse_plan, BackendKind, ExperimentCase, ExperimentPlan};
use resil_core::metrics::output::{self, DirSink};
use resil_core::metrics::DEFAULT_BASELINE_INTENSITY;
use resil_core::orchestrator::{run_cases, CampaignResult, CampaignSink, ExperimentResult, Phase, PhaseEvent, RunnerConfig};
use resil_core::report;

#[derive(Debug, Parser)]
#[command(name = "resil", version, about = "Run fault-injection campaigns and analyse their results")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BackendFlag {
    Sim,
    Http,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Execute every case of a plan and write the run directory.
    Run {
        #[arg(long)]
        plan: PathBuf,
        /// Overrides the plan's backend.
        #[arg(long, value_enum)]
        backend: Option<BackendFlag>,
        /// Agent URL for the http backend.
        #[arg(long, env = "RESIL_ENDPOINT")]
        endpoint: Option<String>,
        /// Overrides the plan's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Baseline intensity for the run-time z-scores.
        #[arg(long, default_value_t = DEFAULT_BASELINE_INTENSITY)]
        baseline_intensity: u32,
        /// Suppress progress lines.
        #[arg(long)]
        quiet: bool,
    },
    /// Recompute zscores.csv from requests.csv and summary.csv.
    Analyze {
        dir: PathBuf,
        #[arg(long, default_value_t = DEFAULT_BASELINE_INTENSITY)]
        baseline_intensity: u32,
    },
    /// Write report.md for a run directory.
    Report { dir: PathBuf },
}

/// Failures that map to exit code 2.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

/// Prints one stderr line per phase transition, then forwards to the inner sink.
struct Progress<S> {
    inner: S,
    quiet: bool,
    last: Option<Phase>,
    total: usize,
    done: usize,
}

impl<S: CampaignSink> CampaignSink for Progress<S> {
    fn begin(&mut self, plan: &ExperimentPlan, cases: &[ExperimentCase]) -> io::Result<()> {
        self.total = cases.len();
        self.inner.begin(plan, cases)
    }

    fn event(&mut self, event: &PhaseEvent) -> io::Result<()> {
        if !self.quiet {
            match event.phase {
                Phase::Campaign => {
                    self.last = None;
                    let progress = if event.event == "experiment_start" {
                        format!(" [{}/{}]", self.done + 1, self.total)
                    } else {
                        String::new()
                    };
                    eprintln!("{}{progress} {}", event.event, event.detail);
                }
                p if self.last != Some(p) || event.event == "abort" => {
                    self.last = Some(p);
                    eprintln!("  {p} {} {}", event.event, event.detail);
                }
                _ => {}
            }
        }
        self.inner.event(event)
    }

    fn experiment(&mut self, result: &ExperimentResult) -> io::Result<()> {
        self.done += 1;
        self.inner.experiment(result)
    }

    fn finish(&mut self, campaign: &CampaignResult) -> io::Result<()> {
        self.inner.finish(campaign)
    }
}

fn load_plan(path: &Path) -> anyhow::Result<ExperimentPlan> {
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read plan {}: {e}", path.display())))?;
    parse_plan(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

#[allow(clippy::too_many_arguments)]
fn cmd_run(
    plan_path: &Path,
    backend: Option<BackendFlag>,
    endpoint: Option<String>,
    seed: Option<u64>,
    out: &Path,
    baseline_intensity: u32,
    quiet: bool,
) -> anyhow::Result<bool> {
    let mut plan = load_plan(plan_path)?;
    if let Some(s) = seed {
        plan.seed = s;
    }
    if let Some(b) = backend {
        plan.backend = match b {
            BackendFlag::Sim => BackendKind::Sim,
            BackendFlag::Http => BackendKind::Remote,
        };
    }
    let cases = expand_campaign(&plan).map_err(|e| usage(format!("{}: {e}", plan_path.display())))?;

    let mut backend: Box<dyn ClusterBackend> = match plan.backend {
        BackendKind::Sim => {
            let profile = plan.resolved_profile().map_err(usage)?;
            Box::new(build_cluster(profile, plan.deployment_mode, plan.seed).context("building simulated cluster")?)
        }
        BackendKind::Remote => {
            let Some(url) = endpoint else {
                return Err(usage("the http backend needs --endpoint or RESIL_ENDPOINT"));
            };
            Box::new(RemoteBackend::new(&url).map_err(|e| usage(e.to_string()))?)
        }
    };

    let sink = DirSink::new(out).with_context(|| format!("creating {}", out.display()))?;
    if sink.created_dir() && !quiet {
        eprintln!("created output directory {}", out.display());
    }
    let mut sink = Progress {
        inner: sink,
        quiet,
        last: None,
        total: 0,
        done: 0,
    };
    let cfg = RunnerConfig {
        baseline_intensity,
        ..RunnerConfig::from_plan(&plan)
    };
    let campaign = run_cases(&plan, &cases, backend.as_mut(), &cfg, &mut sink)?;
    if !quiet {
        eprintln!(
            "finished: {} completed, {} aborted, {} not run; outputs in {}",
            campaign.results.len() - campaign.aborted_cases.len(),
            campaign.aborted_cases.len(),
            campaign.unrun_cases.len(),
            out.display()
        );
    }
    Ok(campaign.all_completed())
}

fn require_dir(dir: &Path) -> anyhow::Result<()> {
    if !dir.is_dir() {
        bail!("{} is not a directory", dir.display());
    }
    Ok(())
}

fn cmd_analyze(dir: &Path, baseline_intensity: u32) -> anyhow::Result<bool> {
    require_dir(dir)?;
    let table = output::analyze_dir(dir, baseline_intensity)?;
    output::write_zscores(&dir.join(output::ZSCORES_CSV), &table)?;
    eprintln!("wrote {} ({} rows)", dir.join(output::ZSCORES_CSV).display(), table.rows.len());
    Ok(true)
}

fn cmd_report(dir: &Path) -> anyhow::Result<bool> {
    require_dir(dir)?;
    let path = report::write_report(dir)?;
    eprintln!("wrote {}", path.display());
    Ok(true)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Run {
            plan,
            backend,
            endpoint,
            seed,
            out,
            baseline_intensity,
            quiet,
        } => cmd_run(&plan, backend, endpoint, seed, &out, baseline_intensity, quiet),
        Command::Analyze { dir, baseline_intensity } => cmd_analyze(&dir, baseline_intensity),
        Command::Report { dir } => cmd_report(&dir),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) if e.is::<Usage>() => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
