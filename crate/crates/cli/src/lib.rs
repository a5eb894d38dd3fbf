//! Experiment harness: dataset generation, training runs, temperature
//! sweeps, the verification suite and report emission.
//!
//! Output layout under the output root:
//!
//! ```text
//! dataset/                  manifest.json, patches/
//! runs/<strategy>/          log.csv, checkpoint.bin, summary.json
//! sweep/tau_<τ>/            log.csv, checkpoint.bin, summary.json
//! sweep/correlation.csv     ρ(term, τ)
//! verify/verification.json
//! report/                   CSV tables and SVG plots
//! ```

pub mod commands;
pub mod config;
pub mod plot;
pub mod verify;

use thiserror::Error;

pub use commands::{
    cmd_generate, cmd_report, cmd_sweep_tau, cmd_train, cmd_verify, correlations, train_run, OutputPaths,
    RunSummary,
};
pub use config::ExperimentConfig;
pub use verify::{run_suite, VerificationReport};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("verification failed: {0}")]
    Verification(String),
    #[error("I/O error: {0}")]
    Io(String),
    #[error("{0}")]
    Run(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Verification(_) => 3,
            CliError::Io(_) => 4,
            CliError::Run(_) => 1,
        }
    }
}

impl From<ctda_core::Error> for CliError {
    fn from(e: ctda_core::Error) -> Self {
        use ctda_core::Error as E;
        match e {
            E::Config(_) | E::InvalidArgument(_) => CliError::Config(e.to_string()),
            E::Schema { .. } => CliError::Io(e.to_string()),
            ref other if other.is_io() => CliError::Io(e.to_string()),
            other => CliError::Run(other.to_string()),
        }
    }
}

pub(crate) fn io_err(path: &std::path::Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}
