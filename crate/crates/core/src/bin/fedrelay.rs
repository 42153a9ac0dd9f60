//! Command-line front end: run experiments from a config file, validate a
//! config, or replay a recorded manifest and verify byte-identical outputs.

use clap::{Parser, Subcommand};
use fedrelay::harness::{self, RunOptions};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "fedrelay", version, about = "Latency-minimal federated learning over multi-hop relay networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run {
        config: PathBuf,
        /// Override the base seed (clears any seed list in the config).
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory for CSVs and the manifest.
        #[arg(long, default_value = "results")]
        out: PathBuf,
        /// Maximum concurrently processed seed cells.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Override the optimizer stopping tolerance.
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Parse and validate a config file without running anything.
    Validate { config: PathBuf },
    /// Re-run a recorded manifest and check outputs for byte-identity.
    Replay {
        manifest: PathBuf,
        /// Output directory (defaults to the manifest's directory).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        tol: Option<f64>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, harness::HarnessError> {
    match cli.command {
        Command::Run { config, seed, out, jobs, tol } => {
            let (cfg, text) = harness::load_config(&config)?;
            let opts = RunOptions { seed, jobs, tol };
            let outcome = harness::run(&cfg, &text, &out, &opts)?;
            for file in &outcome.files {
                println!("wrote {}", file.display());
            }
            if outcome.all_ok() {
                println!("{} cells ok", outcome.total_cells);
                Ok(ExitCode::SUCCESS)
            } else {
                eprintln!("{} of {} cells failed", outcome.failed_cells, outcome.total_cells);
                Ok(ExitCode::FAILURE)
            }
        }
        Command::Validate { config } => {
            let (cfg, _) = harness::load_config(&config)?;
            println!("ok: {} experiment, seeds {:?}", cfg.kind.output_file(), cfg.seed_list());
            Ok(ExitCode::SUCCESS)
        }
        Command::Replay { manifest, out, jobs, tol } => {
            let opts = RunOptions { seed: None, jobs, tol };
            let replayed = harness::replay(&manifest, out.as_deref(), &opts)?;
            if replayed.mismatches.is_empty() {
                println!("replay ok: {} file(s) verified byte-identical", replayed.verified);
                Ok(ExitCode::SUCCESS)
            } else {
                for path in &replayed.mismatches {
                    eprintln!("mismatch: {}", path.display());
                }
                Ok(ExitCode::FAILURE)
            }
        }
    }
}
