//! `wavepinn`: synthesize ultrasonic wavefields, denoise them with PCA, train
//! physics-informed networks on them and export the recovered speed maps.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 I/O or file
//! format error, 4 numerical failure (CFL violation, divergence, failed
//! self-test).

mod commands;
mod error;
mod manifest;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{export, filter, generate, selftest, train};
use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "wavepinn", version, about = "PINN sound-speed inversion of ultrasonic wavefields")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "WAVEPINN_THREADS")]
    threads: Option<usize>,
    /// Record that the run must be reproducible from its manifest. Results
    /// never depend on the thread count, so this only marks the manifest.
    #[arg(long, global = true)]
    deterministic: bool,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    /// Only log warnings and errors.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve the wave equation and write a WFD snapshot stack.
    Generate(generate::GenerateArgs),
    /// PCA-filter a snapshot stack.
    Filter(filter::FilterArgs),
    /// Train a PINN on a snapshot stack.
    Train(train::TrainArgs),
    /// Write plot-ready CSVs and error scalars for a training run.
    Export(export::ExportArgs),
    /// Run the derivative and solver self-checks.
    Selftest(selftest::SelftestArgs),
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::usage("--threads must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::usage(format!("thread pool: {e}")))?;
    }
    let det = cli.deterministic;
    match cli.command {
        Command::Generate(a) => generate::run(a, det),
        Command::Filter(a) => filter::run(a, det),
        Command::Train(a) => train::run(a, det),
        Command::Export(a) => export::run(a, det),
        Command::Selftest(a) => selftest::run(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match (cli.quiet, cli.verbose) {
        (true, _) => "warn",
        (false, 0) => "info",
        (false, _) => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {:#}", e.error);
            e.exit_code()
        }
    }
}
