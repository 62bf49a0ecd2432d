//! The `orules` command line: `run` (ensemble), `trace` (one trajectory
//! with its full log) and `check` (parse and validate only).

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::harness::{
    export_stats, export_trace, export_traces, run_ensemble_with, run_trajectory_with, RunOptions,
};
use crate::rules::Eligibility;
use crate::scenario::{parse_scenario, Scenario};

pub const EXIT_OK: i32 = 0;
pub const EXIT_SCENARIO: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

/// Environment variable overriding the number of ensemble workers.
pub const WORKERS_ENV: &str = "ORULES_WORKERS";

#[derive(Debug, Parser)]
#[command(
    name = "orules",
    version,
    about = "Simulate oRule state reduction in Schrodinger-cat experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run an ensemble of trajectories and report terminal outcomes.
    Run(RunArgs),
    /// Run one trajectory and print its full event log.
    Trace(TraceArgs),
    /// Parse and validate a scenario file.
    Check(CheckArgs),
}

#[derive(Debug, Args)]
struct Dynamics {
    /// Scenario file (.scn).
    scenario: PathBuf,
    /// Seed of the first trajectory.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Time step override, in absolute time units.
    #[arg(long, value_parser = positive_time)]
    dt: Option<f64>,
    /// Let oRule 1 choose any component and discard choices without ready
    /// brain states.
    #[arg(long)]
    strict_orule1: bool,
    /// Keep phantom components instead of dropping them.
    #[arg(long)]
    no_prune: bool,
    /// Write the event trace (CSV) to this file.
    #[arg(long)]
    trace_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    common: Dynamics,
    /// Number of trajectories.
    #[arg(long, default_value_t = 1000, value_parser = clap::value_parser!(u64).range(1..))]
    runs: u64,
    /// Write ensemble statistics (JSON) to this file.
    #[arg(long)]
    stats_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TraceArgs {
    #[command(flatten)]
    common: Dynamics,
}

#[derive(Debug, Args)]
struct CheckArgs {
    /// Scenario file (.scn).
    scenario: PathBuf,
}

fn positive_time(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        _ => Err(format!("`{s}` is not a positive time")),
    }
}

/// Resolved command-line settings.
#[derive(Debug, Clone, PartialEq)]
pub struct CliConfig {
    pub scenario_path: PathBuf,
    pub runs: u64,
    pub seed: u64,
    pub dt_override: Option<f64>,
    pub strict_orule1: bool,
    pub prune: bool,
    pub trace_out: Option<PathBuf>,
    pub stats_out: Option<PathBuf>,
}

impl CliConfig {
    fn from_dynamics(d: Dynamics, runs: u64, stats_out: Option<PathBuf>) -> Self {
        CliConfig {
            scenario_path: d.scenario,
            runs,
            seed: d.seed,
            dt_override: d.dt,
            strict_orule1: d.strict_orule1,
            prune: !d.no_prune,
            trace_out: d.trace_out,
            stats_out,
        }
    }

    pub fn options(&self) -> RunOptions {
        RunOptions {
            eligibility: if self.strict_orule1 {
                Eligibility::All
            } else {
                Eligibility::ReadyOnly
            },
            prune: self.prune,
            dt: self.dt_override,
            ..RunOptions::default()
        }
    }
}

struct Failure {
    code: i32,
    message: String,
}

fn scenario_error(message: String) -> Failure {
    Failure {
        code: EXIT_SCENARIO,
        message,
    }
}

fn runtime_error(message: String) -> Failure {
    Failure {
        code: EXIT_RUNTIME,
        message,
    }
}

fn load(path: &Path) -> Result<Scenario, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| scenario_error(format!("{}: {e}", path.display())))?;
    parse_scenario(&text).map_err(|e| {
        let lines: Vec<String> = e
            .diagnostics
            .iter()
            .map(|d| format!("{}:{d}", path.display()))
            .collect();
        scenario_error(lines.join("\n"))
    })
}

fn write_file(path: &Path, contents: &str) -> Result<(), Failure> {
    std::fs::write(path, contents)
        .map_err(|e| runtime_error(format!("cannot write {}: {e}", path.display())))
}

fn workers() -> Result<Option<usize>, Failure> {
    match std::env::var(WORKERS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(scenario_error(format!(
                "{WORKERS_ENV} must be a positive integer, got `{v}`"
            ))),
        },
    }
}

fn run(cfg: &CliConfig, out: &mut dyn Write) -> Result<(), Failure> {
    let sc = load(&cfg.scenario_path)?;
    let workers = workers()?;
    let ensemble = run_ensemble_with(&sc, cfg.runs as usize, cfg.seed, &cfg.options(), workers)
        .map_err(|e| runtime_error(e.to_string()))?;
    let stats = &ensemble.stats;
    let _ = writeln!(
        out,
        "scenario {} ({}), {} runs from seed {}",
        sc.name, sc.version, stats.n_runs, cfg.seed
    );
    for (label, count) in &stats.outcomes {
        let _ = writeln!(
            out,
            "{count:>8}  {:.4}  {label}",
            *count as f64 / stats.n_runs as f64
        );
    }
    let _ = writeln!(out, "runs with a hit: {}", stats.hits);
    if let Some(ks) = stats.ks {
        let _ = writeln!(out, "hit-time KS distance: {ks:.4}");
    }
    if let Some(p) = &cfg.stats_out {
        write_file(p, &export_stats(&sc, cfg.seed, stats))?;
    }
    if let Some(p) = &cfg.trace_out {
        write_file(p, &export_traces(&ensemble.records))?;
    }
    Ok(())
}

fn trace(cfg: &CliConfig, out: &mut dyn Write) -> Result<(), Failure> {
    let sc = load(&cfg.scenario_path)?;
    let record = run_trajectory_with(&sc, cfg.seed, &cfg.options())
        .map_err(|e| runtime_error(format!("seed {}: {e}", cfg.seed)))?;
    let text = export_trace(&record);
    match &cfg.trace_out {
        Some(p) => write_file(p, &text)?,
        None => {
            let _ = out.write_all(text.as_bytes());
        }
    }
    let _ = writeln!(out, "terminal: {}", record.terminal_label);
    Ok(())
}

fn check(path: &Path, out: &mut dyn Write) -> Result<(), Failure> {
    let sc = load(path)?;
    let _ = writeln!(
        out,
        "{}: ok ({}, half_life {}, transit_time {}, events: {})",
        path.display(),
        sc.version,
        sc.params.half_life,
        sc.params.transit_time,
        sc.events.events().len()
    );
    Ok(())
}

/// Runs the command line and returns the process exit code: 0 on success,
/// 2 for usage or scenario errors, 3 for runtime errors.
pub fn main_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = err.write_all(text.as_bytes());
                EXIT_SCENARIO
            } else {
                let _ = out.write_all(text.as_bytes());
                EXIT_OK
            };
        }
    };
    let result = match cli.command {
        Command::Run(a) => run(
            &CliConfig::from_dynamics(a.common, a.runs, a.stats_out),
            out,
        ),
        Command::Trace(a) => trace(&CliConfig::from_dynamics(a.common, 1, None), out),
        Command::Check(a) => check(&a.scenario, out),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}
