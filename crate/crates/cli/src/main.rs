use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use ctda::{cmd_generate, cmd_report, cmd_sweep_tau, cmd_train, cmd_verify, CliError, ExperimentConfig};
use ctda_core::synthgen::DatasetMode;

#[derive(Parser)]
#[command(name = "ctda", version, about = "Synthetic cross-domain contrastive learning laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON experiment configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Mixed,
    Augmented,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset.
    Generate {
        #[arg(long, value_enum)]
        mode: Option<Mode>,
    },
    /// Train every configured strategy.
    Train,
    /// Train across the temperature grid and correlate terms with the loss.
    SweepTau,
    /// Run the property suite.
    Verify,
    /// Emit tables and plots from existing runs.
    Report,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config = config.with_seed(seed);
    }
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(CliError::Config("--jobs must be positive".into()));
        }
        pool = pool.num_threads(jobs);
    }
    let pool = pool.build().map_err(|e| CliError::Run(e.to_string()))?;
    pool.install(|| match cli.command {
        Command::Generate { mode } => {
            let mode = mode.map(|m| match m {
                Mode::Mixed => DatasetMode::Mixed,
                Mode::Augmented => DatasetMode::Augmented,
            });
            let manifest = cmd_generate(&config, mode)?;
            println!("generated {} patches", manifest.records.len());
            Ok(())
        }
        Command::Train => {
            for s in cmd_train(&config)? {
                println!(
                    "{}: epoch {} test accuracy {:.4} OvO AUC {:.4}",
                    s.strategy.name(), s.selected_epoch, s.test.accuracy, s.test.ovo_auc
                );
            }
            Ok(())
        }
        Command::SweepTau => {
            for row in cmd_sweep_tau(&config)? {
                println!("tau {} {} rho {:.4}", row.tau, row.term, row.rho);
            }
            Ok(())
        }
        Command::Verify => {
            let report = cmd_verify(&config)?;
            for c in &report.checks {
                let status = if c.passed { "pass" } else { "FAIL" };
                println!("{status} {} measured {:.3e} tolerance {:.3e}", c.name, c.measured, c.tolerance);
            }
            if report.passed {
                Ok(())
            } else {
                let names: Vec<&str> = report.failures().iter().map(|c| c.name.as_str()).collect();
                Err(CliError::Verification(names.join(", ")))
            }
        }
        Command::Report => {
            for file in cmd_report(&config)? {
                println!("{file}");
            }
            Ok(())
        }
    })
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ctda: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
