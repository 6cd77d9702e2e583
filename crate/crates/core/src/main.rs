// SPDX-License-Identifier: MIT OR Apache-2.0

use std::path::PathBuf;
use std::process::ExitCode;

use analogy_probe::experiment::{self, Overrides, RunError};
use clap::{Parser, Subcommand};

/// Environment variable that sets the number of worker threads.
const WORKERS_ENV: &str = "ANALOGY_PROBE_WORKERS";

#[derive(Parser)]
#[command(
    name = "analogy-probe",
    version,
    about = "Interpretability workbench for analogical reasoning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the analysis described by a config file.
    Run {
        config: PathBuf,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config's output directory.
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Check a config file without running it.
    Validate { config: PathBuf },
}

fn init_workers() -> Result<(), String> {
    let Ok(raw) = std::env::var(WORKERS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("{WORKERS_ENV} must be a positive integer, got {raw:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = init_workers() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    match cli.command {
        Command::Validate { config } => {
            let diags = experiment::validate(&config);
            if diags.is_empty() {
                println!("{}: ok", config.display());
                ExitCode::SUCCESS
            } else {
                for d in &diags {
                    eprintln!("{d}");
                }
                ExitCode::from(2)
            }
        }
        Command::Run {
            config,
            seed,
            output_dir,
        } => {
            let overrides = Overrides { seed, output_dir };
            match experiment::run(&config, &overrides) {
                Ok(manifest) => {
                    for (name, sum) in &manifest.outputs {
                        println!("{sum}  {name}");
                    }
                    ExitCode::SUCCESS
                }
                Err(e @ RunError::Config(_)) => {
                    eprint!("{e}");
                    ExitCode::from(2)
                }
                Err(e) => {
                    eprintln!("{e}");
                    ExitCode::from(1)
                }
            }
        }
    }
}
