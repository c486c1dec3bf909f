//! covbound: certified entrywise covariance bounds for EKFs.
//!
//! Exit codes: 0 success; 1 oracle violation above threshold (or residual
//! failure for verify-decomposition); 2 SDP infeasible / solver failure;
//! 3 configuration error.

mod commands;
mod output;

use clap::{Parser, Subcommand};
use commands::CmdOutcome;
use covbound::Error;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "covbound",
    version,
    about = "Certified entrywise covariance bounds for extended Kalman filters"
)]
struct Cli {
    /// Override the config's master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for per-entry solves and the oracle (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Directory for output files (relative config paths resolve here).
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario: EKF + certified bounds, optional Monte Carlo oracle.
    Run {
        config: PathBuf,
        /// Populate the solve_time_ms CSV cells (breaks byte-level
        /// reproducibility of the CSV; timings are always in the summary).
        #[arg(long)]
        timings: bool,
    },
    /// Check the exactness of a system's catalog decomposition by sampling.
    VerifyDecomposition { config: PathBuf },
    /// Emit a CSV comparing nominal EKF, certified bounds, and empirical
    /// covariance per entry per step.
    Compare { config: PathBuf },
}

fn classify(e: &Error) -> u8 {
    match e {
        Error::BoundUnavailable { .. } | Error::Numerical(_) => 2,
        Error::DecompositionInvalid { .. } => 1,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();

    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("error: cannot configure thread pool: {e}");
            return ExitCode::from(3);
        }
    }

    // Log level comes from the environment only.
    let verbose = matches!(
        std::env::var("COVBOUND_LOG").as_deref(),
        Ok("debug") | Ok("trace")
    );

    let outcome = match &cli.command {
        Command::Run { config, timings } => {
            commands::cmd_run(config, &cli.out_dir, cli.seed, *timings)
        }
        Command::VerifyDecomposition { config } => {
            commands::cmd_verify_decomposition(config, cli.seed)
        }
        Command::Compare { config } => commands::cmd_compare(config, &cli.out_dir, cli.seed),
    };

    match outcome {
        Ok(CmdOutcome::Success) => ExitCode::SUCCESS,
        Ok(CmdOutcome::OracleViolation) => {
            eprintln!("error: oracle violation rate above threshold");
            ExitCode::from(1)
        }
        Ok(CmdOutcome::ResidualFailure) => {
            eprintln!("error: decomposition residuals above tolerance");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            if verbose {
                eprintln!("error detail: {e:?}");
            }
            ExitCode::from(classify(&e))
        }
    }
}
