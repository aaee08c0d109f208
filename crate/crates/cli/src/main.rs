//! `sysid`: simulate, identify and probe linear dynamical systems from a JSON config.

mod commands;
mod config;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use commands::Session;

#[derive(Parser)]
#[command(name = "sysid", version, about = "System identification experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON experiment config (`"schema": 1`).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for every output file.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a trajectory and write it as CSV.
    Simulate(Common),
    /// Learn a realization from a trajectory.
    Identify {
        #[command(flatten)]
        common: Common,
        /// Trajectory CSV; simulated from the config when omitted.
        #[arg(long)]
        trajectory: Option<PathBuf>,
    },
    /// Tabulate the indistinguishable-pair construction over a (delta, T) grid.
    Lowerbound(Common),
    /// Second moment of the naive and stabilized estimators on the scalar integrator.
    VarianceDemo(Common),
    /// Empirical hypercontractivity and anti-concentration of the noise menu.
    Probe(Common),
}

fn init_threads() -> Result<()> {
    let Ok(raw) = std::env::var("SYSID_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .with_context(|| format!("SYSID_THREADS must be a positive integer, got `{raw}`"))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    init_threads()?;
    let (common, trajectory) = match &cli.command {
        Command::Simulate(c) | Command::Lowerbound(c) | Command::VarianceDemo(c) | Command::Probe(c) => (c, None),
        Command::Identify { common, trajectory } => (common, trajectory.as_deref()),
    };
    let mut config = config::load_config(&common.config)?;
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    let mut stdout = std::io::stdout().lock();
    let mut session = Session {
        config,
        out_dir: common.out.clone(),
        stdout: &mut stdout,
    };
    let report = match &cli.command {
        Command::Simulate(_) => commands::simulate_cmd(&mut session)?,
        Command::Identify { .. } => commands::identify_cmd(&mut session, trajectory)?,
        Command::Lowerbound(_) => commands::lowerbound_cmd(&mut session)?,
        Command::VarianceDemo(_) => commands::variance_cmd(&mut session)?,
        Command::Probe(_) => commands::probe_cmd(&mut session)?,
    };
    commands::write_report(&mut session, &report)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("sysid: {e:#}");
            ExitCode::FAILURE
        }
    }
}
