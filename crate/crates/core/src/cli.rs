//! The `mw` command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 configuration error, 3 runtime
//! failure, 4 no convergence within `max_epochs`.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use crate::app::UniformTasks;
use crate::churn::{simulate, static_pool, AvailabilityTrace, SimOptions, SimReport};
use crate::config::{defaults_text, AppKind, ConfigError, RunConfig, SynthSpec};
use crate::master::{run_master, MasterConfig, RunReport};
use crate::radtrans::{
    ionized_radius, run_photoionization, stromgren_radius, EpochStats, Grid, PhysicsParams, StromgrenMaster,
    StromgrenWorker,
};
use crate::transport::tcp::TcpMasterTransport;
use crate::worker::run_worker;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;
pub const EXIT_NOT_CONVERGED: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "mw", version, about = "Churn-tolerant master-worker runs and the photoionization demo")]
pub struct Cli {
    /// Print the configuration defaults table and exit.
    #[arg(long)]
    pub print_defaults: bool,
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AppArg {
    Stromgren,
    Uniform,
}

impl From<AppArg> for AppKind {
    fn from(a: AppArg) -> Self {
        match a {
            AppArg::Stromgren => AppKind::Stromgren,
            AppArg::Uniform => AppKind::Uniform,
        }
    }
}

#[derive(Debug, Args)]
pub struct Outputs {
    /// Report file (key=value lines).
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Write the report as JSON instead of key=value lines.
    #[arg(long)]
    pub json: bool,
    /// Binary64 neutral-fraction output.
    #[arg(long)]
    pub output_grid: Option<PathBuf>,
    /// CSV (i,j,k,x) neutral-fraction output.
    #[arg(long)]
    pub output_csv: Option<PathBuf>,
    /// Override a config key, `key=value`; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Serve tasks to socket workers.
    Master {
        #[arg(long)]
        config: PathBuf,
        /// HOST:PORT to listen on.
        #[arg(long)]
        listen: Option<String>,
        #[command(flatten)]
        out: Outputs,
    },
    /// Connect to a master and execute tasks.
    Worker {
        /// HOST:PORT of the master.
        #[arg(long)]
        connect: String,
        #[arg(long, value_enum, default_value = "stromgren")]
        app: AppArg,
    },
    /// Replay an availability trace in the virtual-time simulator.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Availability trace CSV (`time_s,label,kind`).
        #[arg(long, conflicts_with = "synth")]
        trace: Option<PathBuf>,
        /// Synthetic trace `n=..,spread=..,uptime=..,seed=..`.
        #[arg(long)]
        synth: Option<String>,
        #[arg(long, value_enum)]
        app: Option<AppArg>,
        #[command(flatten)]
        out: Outputs,
    },
    /// Bundled scenarios.
    Demo {
        #[command(subcommand)]
        scenario: Demo,
    },
}

#[derive(Debug, Subcommand)]
pub enum Demo {
    /// Strömgren sphere in uniform gas, simulated, compared to the analytic radius.
    Stromgren {
        /// Cells per axis; the analytic radius is n/4 cells.
        #[arg(long, default_value_t = 32)]
        n: usize,
        #[arg(long, default_value_t = 8)]
        workers: usize,
        /// Replace the static pool by a synthetic churn trace with this seed.
        #[arg(long)]
        churn: Option<u64>,
        #[command(flatten)]
        out: Outputs,
    },
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("config error: {0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Runtime(String),
    #[error("did not converge within {0} epochs")]
    NotConverged(u32),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Runtime(_) => EXIT_RUNTIME,
            CliError::NotConverged(_) => EXIT_NOT_CONVERGED,
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

/// Outcome of the photoionization app, independent of the driver.
struct PhysicsSummary {
    grid: Grid<f64>,
    params: PhysicsParams<f64>,
    converged: bool,
    epochs: Vec<EpochStats>,
}

impl PhysicsSummary {
    fn kv(&self) -> String {
        let mut s = String::new();
        let n_h = self.grid.density().first().copied().unwrap_or(0.0);
        let uniform = self.grid.density().iter().all(|d| *d == n_h);
        let _ = writeln!(s, "converged={}", self.converged);
        let _ = writeln!(s, "physics_epochs={}", self.epochs.len());
        if let Some(last) = self.epochs.last() {
            let _ = writeln!(s, "max_change={}", last.max_change);
        }
        if let Some(first) = self.epochs.first() {
            let _ = writeln!(s, "epoch1_tasks={}", first.tasks);
            let _ = writeln!(s, "epoch1_max_delta_entries={}", first.max_entries);
            let _ = writeln!(s, "epoch1_delta_bytes={}", first.delta_bytes);
        }
        let _ = writeln!(s, "ionized_radius={}", ionized_radius(&self.grid, 0.5));
        if uniform && n_h > 0.0 {
            let rs = stromgren_radius(self.params.source_rate, self.params.alpha, n_h);
            let _ = writeln!(s, "stromgren_radius={rs}");
        }
        s
    }
}

struct Finished {
    kv: String,
    json: serde_json::Value,
    physics: Option<PhysicsSummary>,
}

fn emit(done: &Finished, out: &Outputs, stdout: &mut dyn Write) -> Result<(), CliError> {
    if let Some(p) = &done.physics {
        if let Some(path) = &out.output_grid {
            let mut bytes = Vec::with_capacity(p.grid.cells() * 8);
            p.grid.write_neutral_f64(&mut bytes).map_err(runtime)?;
            write_file(path, &bytes)?;
        }
        if let Some(path) = &out.output_csv {
            write_file(path, p.grid.neutral_csv().as_bytes())?;
        }
    }
    let text = if out.json {
        serde_json::to_string_pretty(&done.json).map_err(runtime)? + "\n"
    } else {
        done.kv.clone()
    };
    if let Some(path) = &out.report {
        write_file(path, text.as_bytes())?;
    }
    stdout.write_all(text.as_bytes()).map_err(runtime)?;
    match &done.physics {
        Some(p) if !p.converged => Err(CliError::NotConverged(p.params.max_epochs)),
        _ => Ok(()),
    }
}

fn physics_json(p: &PhysicsSummary) -> serde_json::Value {
    let n_h = p.grid.density().first().copied().unwrap_or(0.0);
    serde_json::json!({
        "converged": p.converged,
        "epochs": p.epochs,
        "ionized_radius": ionized_radius(&p.grid, 0.5),
        "stromgren_radius": stromgren_radius(p.params.source_rate, p.params.alpha, n_h),
    })
}

fn finish_sim(sim: SimReport, physics: Option<PhysicsSummary>, extra: &str) -> Finished {
    let mut kv = sim.to_kv();
    kv.push_str(extra);
    let mut json = serde_json::json!({ "sim": sim });
    if let Some(p) = &physics {
        kv.push_str(&p.kv());
        json["physics"] = physics_json(p);
    }
    Finished { kv, json, physics }
}

fn finish_run(run: RunReport, physics: Option<PhysicsSummary>) -> Finished {
    let mut kv = run.to_kv();
    let mut json = serde_json::json!({ "run": run });
    if let Some(p) = &physics {
        kv.push_str(&p.kv());
        json["physics"] = physics_json(p);
    }
    Finished { kv, json, physics }
}

fn simulate_config(cfg: &RunConfig, trace: &AvailabilityTrace) -> Result<Finished, CliError> {
    let options = SimOptions {
        latency_s: cfg.latency_s,
        record_log: false,
    };
    match cfg.app {
        AppKind::Stromgren => {
            let grid = cfg.build_grid()?;
            let worker = StromgrenWorker {
                cost_s: cfg.task_cost_s,
            };
            let run = run_photoionization(grid, cfg.physics, cfg.master.clone(), trace, &worker, &options)
                .map_err(runtime)?;
            let physics = PhysicsSummary {
                grid: run.grid,
                params: cfg.physics,
                converged: run.converged,
                epochs: run.epochs,
            };
            Ok(finish_sim(run.sim, Some(physics), ""))
        }
        AppKind::Uniform => {
            let app = UniformTasks::new(cfg.tasks, cfg.task_cost_s);
            let (sim, _) = simulate(cfg.master.clone(), app.clone(), &app, trace, &options).map_err(runtime)?;
            Ok(finish_sim(sim, None, ""))
        }
    }
}

fn overrides(out: &Outputs, extra: &[(&str, Option<String>)]) -> Vec<String> {
    let mut v = out.set.clone();
    for (k, val) in extra {
        if let Some(val) = val {
            v.push(format!("{k}={val}"));
        }
    }
    for (k, p) in [
        ("output_grid", &out.output_grid),
        ("output_csv", &out.output_csv),
        ("report", &out.report),
    ] {
        if let Some(p) = p {
            v.push(format!("{k}={}", p.display()));
        }
    }
    v
}

/// Output paths after merging flags into the config.
fn merged_outputs(cfg: &RunConfig, json: bool) -> Outputs {
    Outputs {
        report: cfg.report.clone(),
        json,
        output_grid: cfg.output_grid.clone(),
        output_csv: cfg.output_csv.clone(),
        set: Vec::new(),
    }
}

fn cmd_simulate(
    config: &Path,
    trace: Option<PathBuf>,
    synth: Option<String>,
    app: Option<AppArg>,
    out: &Outputs,
    stdout: &mut dyn Write,
) -> Result<(), CliError> {
    let ov = overrides(
        out,
        &[
            ("trace", trace.map(|p| p.display().to_string())),
            ("synth", synth),
            ("app", app.map(|a| AppKind::from(a).to_string())),
        ],
    );
    let cfg = RunConfig::load(config, &ov)?;
    let trace = cfg
        .load_trace()?
        .ok_or_else(|| CliError::Usage("simulate needs --trace or --synth (or a trace/synth key)".into()))?;
    let done = simulate_config(&cfg, &trace)?;
    emit(&done, &merged_outputs(&cfg, out.json), stdout)
}

fn cmd_master(config: &Path, listen: Option<String>, out: &Outputs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<(), CliError> {
    let cfg = RunConfig::load(config, &overrides(out, &[("listen", listen)]))?;
    let mut transport = TcpMasterTransport::bind(cfg.listen.as_str())
        .map_err(|e| CliError::Runtime(format!("cannot listen on {}: {e}", cfg.listen)))?;
    let _ = writeln!(stderr, "listening on {}", transport.local_addr());
    let done = match cfg.app {
        AppKind::Stromgren => {
            let hooks = StromgrenMaster::new(cfg.build_grid()?, cfg.physics).map_err(runtime)?;
            let (run, hooks) = run_master(cfg.master.clone(), hooks, &mut transport).map_err(runtime)?;
            let physics = PhysicsSummary {
                converged: hooks.converged(),
                epochs: hooks.epoch_stats().to_vec(),
                params: *hooks.params(),
                grid: hooks.into_grid(),
            };
            finish_run(run, Some(physics))
        }
        AppKind::Uniform => {
            let hooks = UniformTasks::new(cfg.tasks, cfg.task_cost_s);
            let (run, _) = run_master(cfg.master.clone(), hooks, &mut transport).map_err(runtime)?;
            finish_run(run, None)
        }
    };
    emit(&done, &merged_outputs(&cfg, out.json), stdout)
}

fn cmd_worker(connect: &str, app: AppArg, stderr: &mut dyn Write) -> Result<(), CliError> {
    let summary = match app {
        AppArg::Stromgren => run_worker(connect, &StromgrenWorker::default()),
        AppArg::Uniform => run_worker(connect, &UniformTasks::new(0, 0.0)),
    }
    .map_err(runtime)?;
    let _ = writeln!(
        stderr,
        "worker {} done: tasks={} heartbeats={}",
        summary.worker_id.map_or_else(|| "?".into(), |w| w.to_string()),
        summary.tasks_done,
        summary.heartbeats_sent
    );
    Ok(())
}

/// The churn trace used by `demo stromgren --churn`: on average `workers`
/// machines are up at once, each for 50 task costs, and the trace holds
/// about twice the work a run needs.
pub fn demo_churn_spec(n: usize, workers: usize, seed: u64) -> SynthSpec {
    let uptime = 50.0;
    let work = 240.0 * (n * n) as f64;
    let spread = (work / workers.max(1) as f64).ceil();
    SynthSpec {
        n_workers: ((workers as f64 * spread / uptime).ceil() as usize).max(workers),
        spread_s: spread,
        mean_uptime_s: uptime,
        seed,
    }
}

/// Strömgren demo setup: uniform unit density, unit cell, sigma = alpha = 1
/// and `Q` chosen so the analytic radius is `n / 4` cells.
pub fn demo_setup(n: usize) -> Result<(Grid<f64>, PhysicsParams<f64>), CliError> {
    if !(4..=256).contains(&n) {
        return Err(CliError::Usage("--n must be between 4 and 256".into()));
    }
    let r = n as f64 / 4.0;
    let q = 4.0 * std::f64::consts::PI / 3.0 * r * r * r;
    let grid = Grid::uniform(n, 1.0, 1.0).map_err(runtime)?;
    Ok((grid, PhysicsParams::new(q, 1.0, 1.0)))
}

fn cmd_demo(n: usize, workers: usize, churn: Option<u64>, out: &Outputs, stdout: &mut dyn Write) -> Result<(), CliError> {
    if workers == 0 {
        return Err(CliError::Usage("--workers must be at least 1".into()));
    }
    if !out.set.is_empty() {
        return Err(CliError::Usage("demo takes no --set overrides".into()));
    }
    let (grid, params) = demo_setup(n)?;
    let (trace, extra) = match churn {
        None => (static_pool(workers), format!("pool=static:{workers}\n")),
        Some(seed) => {
            let spec = demo_churn_spec(n, workers, seed);
            (spec.trace(), format!("pool=synth:{spec}\n"))
        }
    };
    let run = run_photoionization(
        grid,
        params,
        MasterConfig::default(),
        &trace,
        &StromgrenWorker::default(),
        &SimOptions::default(),
    )
    .map_err(runtime)?;
    let physics = PhysicsSummary {
        grid: run.grid,
        params,
        converged: run.converged,
        epochs: run.epochs,
    };
    let done = finish_sim(run.sim, Some(physics), &extra);
    emit(&done, out, stdout)
}

fn dispatch(cli: Cli, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<(), CliError> {
    if cli.print_defaults {
        stdout.write_all(defaults_text().as_bytes()).map_err(runtime)?;
        return Ok(());
    }
    match cli.command {
        None => Err(CliError::Usage("a subcommand is required (master, worker, simulate, demo)".into())),
        Some(Command::Master { config, listen, out }) => cmd_master(&config, listen, &out, stdout, stderr),
        Some(Command::Worker { connect, app }) => cmd_worker(&connect, app, stderr),
        Some(Command::Simulate {
            config,
            trace,
            synth,
            app,
            out,
        }) => cmd_simulate(&config, trace, synth, app, &out, stdout),
        Some(Command::Demo {
            scenario: Demo::Stromgren { n, workers, churn, out },
        }) => cmd_demo(n, workers, churn, &out, stdout),
    }
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code; diagnostics go to `stderr` as one line.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(stdout, "{e}");
                    return EXIT_OK;
                }
                _ => EXIT_USAGE,
            };
            let _ = write!(stderr, "{}", e.render());
            return code;
        }
    };
    match dispatch(cli, stdout, stderr) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(stderr, "mw: {e}");
            e.exit_code()
        }
    }
}

/// Entry point used by the binary.
pub fn main_with_env() -> i32 {
    let stdout = io::stdout();
    let stderr = io::stderr();
    run(std::env::args_os(), &mut stdout.lock(), &mut stderr.lock())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn call(args: &[&str]) -> (i32, String, String) {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let code = run(std::iter::once("mw").chain(args.iter().copied()), &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn unknown_subcommand_is_usage_error() {
        assert_eq!(call(&["frobnicate"]).0, EXIT_USAGE);
        assert_eq!(call(&[]).0, EXIT_USAGE);
    }

    #[test]
    fn print_defaults() {
        let (code, out, _) = call(&["--print-defaults"]);
        assert_eq!(code, EXIT_OK);
        assert_eq!(out, defaults_text());
    }

    #[test]
    fn demo_small_reports_radii() {
        let (code, out, err) = call(&["demo", "stromgren", "--n", "8", "--workers", "2"]);
        assert_eq!(code, EXIT_OK, "{err}");
        assert!(out.contains("\nionized_radius="));
        assert!(out.contains("\nstromgren_radius=2\n"));
        assert!(out.contains("converged=true"));
    }

    #[test]
    fn demo_rejects_zero_workers() {
        assert_eq!(call(&["demo", "stromgren", "--n", "8", "--workers", "0"]).0, EXIT_USAGE);
    }

    #[test]
    fn churn_spec_keeps_uptime_short() {
        let s = demo_churn_spec(16, 4, 1);
        assert_eq!(s.mean_uptime_s, 50.0);
        assert!(s.n_workers as f64 * s.mean_uptime_s >= 2.0 * 10.0 * 16.0 * 16.0 * 9.0);
    }
}
