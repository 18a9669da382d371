//! Experiment driver.
//!
//! ```text
//! pper run <config.toml> [--out DIR] [--jobs N]
//! pper replay-metrics <run-dir>
//! ```
//!
//! Exit codes: 0 ok, 1 configuration or usage error, 2 runtime failure
//! (I/O, a numerically aborted run, or a replayed summary that does not match).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pper::config::RunConfig;
use pper::runner;

#[derive(Debug, Parser)]
#[command(
    name = "pper",
    version,
    about = "Prioritized experience replay experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the strategy x environment x seed matrix described by a config file.
    Run {
        config: PathBuf,
        /// Output directory; overrides `run.out` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Recompute a run directory's summary from its scores.csv and compare.
    ReplayMetrics { dir: PathBuf },
}

const CONFIG_ERROR: u8 = 1;
const RUNTIME_ERROR: u8 = 2;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(CONFIG_ERROR)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match cli.command {
        Command::Run { config, out, jobs } => run(config, out, jobs),
        Command::ReplayMetrics { dir } => match runner::replay_metrics(&dir) {
            Ok(summary) => {
                print!("{}", summary.render());
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(RUNTIME_ERROR)
            }
        },
    }
}

fn run(config: PathBuf, out: Option<PathBuf>, jobs: usize) -> ExitCode {
    let config = match RunConfig::load(&config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("configuration error: {e}");
            return ExitCode::from(CONFIG_ERROR);
        }
    };
    if jobs == 0 {
        eprintln!("configuration error: --jobs must be at least 1");
        return ExitCode::from(CONFIG_ERROR);
    }
    let out = out
        .or_else(|| config.out.clone().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"));
    match runner::run_matrix(&config, &out, jobs) {
        Ok(matrix) => {
            print!("{}", matrix.report);
            for r in matrix.runs.iter().filter(|r| r.failure.is_some()) {
                eprintln!(
                    "run aborted: {}: {}",
                    r.dir.display(),
                    r.failure.as_deref().unwrap_or_default()
                );
            }
            if matrix.failures() > 0 {
                ExitCode::from(RUNTIME_ERROR)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(RUNTIME_ERROR)
        }
    }
}
