use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pbec::experiments::{run, write_run, Context, Scenario, ScenarioConfig};
use pbec::params::ParameterFile;
use pbec::Error;

/// Photon-condensate polarization simulator.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Vertical pump, power sweep normalized by P_c.
    PowerSweep(RunArgs),
    /// Linear pump rotated by a half-wave plate at fixed power.
    HwpSweep(RunArgs),
    /// HWP/QWP raster over a Poincaré hemisphere at fixed power.
    Raster(RunArgs),
    /// Critical power along the vertical–circular–horizontal meridian.
    EquatorThresholds(RunArgs),
    /// Raster with an anisotropic cavity.
    Pinning(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Scenario TOML.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Model parameter TOML; shipped defaults when omitted.
    #[arg(long)]
    params: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    /// Accepted for compatibility; the simulator is deterministic.
    #[arg(long, num_args = 0)]
    seedless: bool,
}

const EXIT_CONFIG: u8 = 2;
const EXIT_NOT_CONVERGED: u8 = 3;
const EXIT_NO_THRESHOLD: u8 = 4;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Parse { .. } | Error::InvalidParameter { .. } | Error::InvalidPump(_) => {
            EXIT_CONFIG
        }
        Error::NoThreshold { .. } => EXIT_NO_THRESHOLD,
        Error::NonConvergence { .. } | Error::Stiffness { .. } => EXIT_NOT_CONVERGED,
        _ => 1,
    }
}

fn execute(scenario: Scenario, args: RunArgs) -> Result<u8, Error> {
    let mut config = match &args.config {
        Some(path) => ScenarioConfig::load(path)?,
        None => ScenarioConfig::new(scenario),
    };
    if config.scenario != scenario {
        return Err(Error::Config(format!(
            "config is for `{}` but `{}` was requested",
            config.scenario.name(),
            scenario.name()
        )));
    }
    if let Some(p) = args.params {
        config.params = Some(p);
    }
    if let Some(o) = args.out {
        config.out = Some(o);
    }
    if let Some(w) = args.workers {
        config.workers = Some(w);
    }
    if config.workers == Some(0) {
        return Err(Error::Config("--workers must be at least 1".into()));
    }
    let params = match &config.params {
        Some(p) => ParameterFile::load(p)?,
        None => ParameterFile::shipped(),
    };
    let workers = config
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let dir = config
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("runs").join(scenario.name()));
    let ctx = Context::new(params.clone(), workers)?;
    let output = run(&ctx, &config)?;
    let manifest = write_run(&dir, &config, &params, &output)?;
    eprintln!("{} rows written to {}", manifest.rows, dir.display());
    if output.summary.missing_thresholds > 0 {
        eprintln!("{} rows without a threshold", output.summary.missing_thresholds);
        return Ok(EXIT_NO_THRESHOLD);
    }
    if !output.all_converged() {
        eprintln!("some rows did not converge");
        return Ok(EXIT_NOT_CONVERGED);
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (scenario, args) = match cli.command {
        Command::PowerSweep(a) => (Scenario::PowerSweep, a),
        Command::HwpSweep(a) => (Scenario::HwpSweep, a),
        Command::Raster(a) => (Scenario::Raster, a),
        Command::EquatorThresholds(a) => (Scenario::EquatorThresholds, a),
        Command::Pinning(a) => (Scenario::Pinning, a),
    };
    match execute(scenario, args) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
