//! `qmfs`: batch runner for QMFS experiments.
//!
//! Exit codes: 0 when every invariant holds, 1 when one is violated (details
//! in `summary.json`), 2 on invalid input.

mod commands;
mod config;
mod summary;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use qmfs::error::QmfsError;

use crate::config::{ExperimentConfig, OutputSpec, SeedSpec};
use crate::summary::{write_summary, Report, Tolerances};

#[derive(Debug)]
pub enum CliError {
    /// Bad config, flags or input files (exit 2).
    Input(String),
    /// The computation itself failed (exit 1).
    Failed(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Input(m) => write!(f, "invalid input: {m}"),
            CliError::Failed(m) => write!(f, "{m}"),
        }
    }
}

impl From<QmfsError> for CliError {
    fn from(e: QmfsError) -> Self {
        match e {
            QmfsError::Dimension(_)
            | QmfsError::InvalidInput(_)
            | QmfsError::NotSymmetric { .. }
            | QmfsError::Unphysical { .. }
            | QmfsError::StepTooLarge { .. }
            | QmfsError::DimensionCap { .. }
            | QmfsError::Budget(_)
            | QmfsError::Parse { .. }
            | QmfsError::Json(_) => CliError::Input(e.to_string()),
            _ => CliError::Failed(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Failed(e.to_string())
    }
}

#[derive(Parser)]
#[command(name = "qmfs", version, about = "Quantum-mechanics-free subsystem experiments")]
struct Cli {
    #[command(flatten)]
    common: CommonArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// JSON experiment config; flags override its fields.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Output directory (default: qmfs-out).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Number of trajectories.
    #[arg(long, global = true, value_name = "N")]
    batch: Option<usize>,
    /// Multiplies every tolerance.
    #[arg(long, global = true, value_name = "X", default_value_t = 1.0)]
    tol_scale: f64,
    /// Worker threads; outputs do not depend on this.
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// QMFS verdicts and two-time commutator residuals.
    Check(commands::check::CheckArgs),
    /// Conditional Gaussian trajectories under continuous measurement.
    Simulate(commands::simulate::SimulateArgs),
    /// Force posterior widths against the single oscillator.
    Force(commands::force::ForceArgs),
    /// Classical flow against the truncated Koopman oracle.
    Koopman(commands::koopman::KoopmanArgs),
    /// Exact spin-pair sweep over J0.
    Spin(commands::spin::SpinArgs),
    /// Propagate, verify or synthesize reversible circuits.
    Circuit(commands::circuit::CircuitArgs),
}

fn run(cli: Cli) -> Result<bool, CliError> {
    let common = &cli.common;
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(dir) = &common.out {
        cfg.output = Some(OutputSpec { dir: dir.clone() });
    }
    if common.seed.is_some() || common.batch.is_some() {
        let seeds = cfg.seeds.get_or_insert(SeedSpec { master: 0, batch: 0 });
        if let Some(s) = common.seed {
            seeds.master = s;
        }
        if let Some(b) = common.batch {
            seeds.batch = b;
        }
    }
    if let Some(jobs) = common.jobs {
        if jobs == 0 {
            return Err(CliError::Input("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::Failed(e.to_string()))?;
    }
    let name = match &cli.command {
        Command::Check(a) => {
            a.apply(&mut cfg);
            "check"
        }
        Command::Simulate(a) => {
            a.apply(&mut cfg);
            "simulate"
        }
        Command::Force(a) => {
            a.apply(&mut cfg);
            "force"
        }
        Command::Koopman(a) => {
            a.apply(&mut cfg);
            "koopman"
        }
        Command::Spin(a) => {
            a.apply(&mut cfg);
            "spin"
        }
        Command::Circuit(a) => {
            a.apply(&mut cfg);
            "circuit"
        }
    };

    let dir = cfg.output.as_ref().map(|o| o.dir.clone()).unwrap_or_else(|| PathBuf::from("qmfs-out"));
    std::fs::create_dir_all(&dir)
        .map_err(|e| CliError::Input(format!("cannot create {}: {e}", dir.display())))?;
    let mut tol = Tolerances::new(common.tol_scale, &cfg.tolerances)?;
    let parallel = common.jobs != Some(1);
    let ctx = commands::Context { dir: dir.clone(), parallel };

    let outcome = match cli.command {
        Command::Check(_) => commands::check::run(&cfg, &ctx, &mut tol),
        Command::Simulate(_) => commands::simulate::run(&cfg, &ctx, &mut tol),
        Command::Force(_) => commands::force::run(&cfg, &ctx, &mut tol),
        Command::Koopman(_) => commands::koopman::run(&cfg, &ctx, &mut tol),
        Command::Spin(_) => commands::spin::run(&cfg, &ctx, &mut tol),
        Command::Circuit(_) => commands::circuit::run(&cfg, &ctx, &mut tol),
    };
    // A numerical failure is still reported through the summary.
    let mut report = match outcome {
        Ok(r) => r,
        Err(CliError::Failed(m)) => {
            let mut r = Report::new();
            r.flag("run", false, m);
            r
        }
        Err(e) => return Err(e),
    };
    let unused = tol.unused_overrides();
    if !unused.is_empty() {
        return Err(CliError::Input(format!("unknown tolerance names for {name}: {unused:?}")));
    }

    let config_json = cfg.canonical_json();
    let echo = dir.join("config.json");
    std::fs::write(&echo, serde_json::to_string_pretty(&cfg).expect("config serializes") + "\n")?;
    report.outputs.push(echo);
    let path = write_summary(&dir, name, &config_json, &tol, &report)?;

    for inv in &report.invariants {
        let status = if inv.pass { "ok  " } else { "FAIL" };
        match inv.tolerance {
            Some(t) => println!("{status} {} = {:.3e} (tol {t:.1e}) {}", inv.name, inv.value, inv.detail),
            None => println!("{status} {} {}", inv.name, inv.detail),
        }
    }
    println!("summary: {}", path.display());
    Ok(report.passed())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("qmfs: {e}");
            match e {
                CliError::Input(_) => ExitCode::from(2),
                CliError::Failed(_) => ExitCode::from(1),
            }
        }
    }
}
