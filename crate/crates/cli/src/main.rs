use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use pnpcert_cli::{load_config, run_experiment, validate_config, CliError, RunOverrides};

/// Certification harness for plug-and-play proximal gradient descent.
#[derive(Parser)]
#[command(name = "pnpcert", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute an experiment config: run instance batches, write traces,
    /// certificates, and the summary CSV.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Override the config's output directory.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Worker pool size (0 = one per core).
        #[arg(long)]
        jobs: Option<usize>,
        /// Override the config's master seed.
        #[arg(long)]
        seed_override: Option<u64>,
        /// Validate and describe the config without running.
        #[arg(long)]
        validate_only: bool,
    },
    /// Validate a config and print the computed constants.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    match dispatch() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("pnpcert: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch() -> Result<(), CliError> {
    match Cli::parse().command {
        Command::Validate { config } => {
            let built = validate_config(load_config(&config)?)?;
            print!("{}", built.describe());
            Ok(())
        }
        Command::Run {
            config,
            out_dir,
            jobs,
            seed_override,
            validate_only,
        } => {
            let built = validate_config(load_config(&config)?)?;
            if validate_only {
                print!("{}", built.describe());
                return Ok(());
            }
            let outcome = run_experiment(
                &built,
                &RunOverrides {
                    out_dir,
                    jobs,
                    seed_override,
                },
            )?;
            let total = outcome.summary.len();
            let passed = total - outcome.failed.len();
            println!(
                "{}: {passed}/{total} certificates passed; artifacts in {}",
                built.config.name,
                outcome.out_dir.display()
            );
            if outcome.all_passed() {
                Ok(())
            } else {
                let list = outcome
                    .failed
                    .iter()
                    .map(|(id, theorem)| format!("instance {id} {theorem}"))
                    .collect::<Vec<_>>()
                    .join(", ");
                Err(CliError::Assertion(list))
            }
        }
    }
}
