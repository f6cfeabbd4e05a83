//! Experiment runner behind the `pnpcert` binary: loads a JSON experiment
//! config, builds priors/denoisers/groups/fidelities, executes instance
//! batches in a worker pool, and writes traces, certificates, and a summary
//! CSV. All randomness flows from the single config seed (instance `i` uses
//! `seed + i`), so reruns are byte-identical.

pub mod config;
pub mod runner;

pub use config::{load_config, validate_config, BuiltExperiment, ExperimentConfig};
pub use runner::{run_experiment, RunOutcome, RunOverrides};

/// Failure classes mapped to process exit codes.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Config does not parse or violates a precondition (exit 2).
    #[error("config error: {0}")]
    Config(String),
    /// A hard certification assertion failed (exit 1).
    #[error("certification failed: {0}")]
    Assertion(String),
    /// A run aborted (divergence, inversion failure, I/O) (exit 3).
    #[error("runtime abort: {0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Assertion(_) => 1,
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(format!("i/o: {e}"))
    }
}
