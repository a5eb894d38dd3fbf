//! The five subcommands.

use std::fs;
use std::path::{Path, PathBuf};

use ctda_core::synthgen::{generate_dataset, DatasetMode, Manifest, MANIFEST_FILE};
use ctda_core::theory::{derivative_correlation, Term};
use ctda_core::trainer::{
    evaluate, load_dataset, train, Checkpoint, Evaluation, ExperimentLog, Phase, PreparedData, Strategy,
    TemperatureSchedule, TrainConfig, CHECKPOINT_FILE, LOG_FILE,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::plot::{LinePlot, Series, TABLE_SCHEMA_VERSION};
use crate::verify::{run_suite, VerificationReport};
use crate::{io_err, CliError};

pub const SUMMARY_FILE: &str = "summary.json";
pub const SUMMARY_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct OutputPaths {
    pub root: PathBuf,
}

impl OutputPaths {
    pub fn new(config: &ExperimentConfig) -> Self {
        Self {
            root: config.output_root(),
        }
    }

    pub fn dataset(&self) -> PathBuf {
        self.root.join("dataset")
    }

    pub fn run(&self, strategy: Strategy) -> PathBuf {
        self.root.join("runs").join(strategy.name())
    }

    pub fn sweep(&self) -> PathBuf {
        self.root.join("sweep")
    }

    pub fn sweep_run(&self, tau: f64) -> PathBuf {
        self.sweep().join(format!("tau_{tau}"))
    }

    pub fn verify(&self) -> PathBuf {
        self.root.join("verify")
    }

    pub fn report(&self) -> PathBuf {
        self.root.join("report")
    }
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| io_err(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| io_err(path, e))
}

/// Generates the dataset. `mode` overrides the configured mode.
pub fn cmd_generate(config: &ExperimentConfig, mode: Option<DatasetMode>) -> Result<Manifest, CliError> {
    let dir = OutputPaths::new(config).dataset();
    create_dir(&dir)?;
    let d = &config.dataset;
    Ok(generate_dataset(
        &config.generator,
        d.n_patches,
        mode.unwrap_or(d.mode),
        d.split_seed,
        &dir,
    )?)
}

/// Loads and featurizes the generated dataset.
pub fn load_data(config: &ExperimentConfig) -> Result<PreparedData, CliError> {
    let dir = OutputPaths::new(config).dataset();
    if !dir.join(MANIFEST_FILE).exists() {
        return Err(CliError::Io(format!(
            "no dataset at {}; run `ctda generate` first",
            dir.display()
        )));
    }
    Ok(load_dataset(&dir, config.train.encoding)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSummary {
    pub schema: u32,
    pub strategy: Strategy,
    pub temperature_schedule: TemperatureSchedule,
    pub parameter_count: usize,
    pub selected_epoch: usize,
    pub validation: Evaluation,
    pub test: Evaluation,
}

/// Trains one configuration and writes `log.csv`, `checkpoint.bin` and
/// `summary.json` into `dir`.
pub fn train_run(config: &TrainConfig, data: &PreparedData, dir: &Path) -> Result<(RunSummary, ExperimentLog), CliError> {
    let out = train(config, data)?;
    create_dir(dir)?;
    out.log.save(&dir.join(LOG_FILE))?;
    let checkpoint = Checkpoint {
        encoding: data.encoding,
        feature_map: out.feature_map.clone(),
        head: out.head.clone(),
        normalizer: data.normalizer.clone(),
    };
    checkpoint.save(&dir.join(CHECKPOINT_FILE))?;
    let summary = RunSummary {
        schema: SUMMARY_SCHEMA_VERSION,
        strategy: config.strategy,
        temperature_schedule: config.temperature_schedule,
        parameter_count: out.feature_map.parameter_count() + out.head.weight.len() + out.head.bias.len(),
        selected_epoch: out.log.selected().map(|r| r.epoch).unwrap_or(0),
        validation: evaluate(&out.feature_map, &out.head, &data.validation)?,
        test: evaluate(&out.feature_map, &out.head, &data.test)?,
    };
    write_json(&dir.join(SUMMARY_FILE), &summary)?;
    Ok((summary, out.log))
}

/// Trains every configured strategy on the generated dataset.
pub fn cmd_train(config: &ExperimentConfig) -> Result<Vec<RunSummary>, CliError> {
    let data = load_data(config)?;
    let paths = OutputPaths::new(config);
    config
        .strategies()
        .par_iter()
        .map(|&strategy| {
            let tc = TrainConfig {
                strategy,
                ..config.train.clone()
            };
            train_run(&tc, &data, &paths.run(strategy)).map(|(s, _)| s)
        })
        .collect()
}

/// Correlation of first differences between each term and the τ-scaled
/// loss over the contrastive epochs. `NaN` where undefined.
pub fn correlations(log: &ExperimentLog) -> Vec<(Term, f64)> {
    let rows: Vec<_> = log.phase(Phase::Contrastive).map(|r| r.decomposition()).collect();
    let loss: Vec<f64> = rows.iter().map(|r| r.scaled_loss()).collect();
    Term::ALL
        .iter()
        .map(|&t| {
            let series: Vec<f64> = rows.iter().map(|r| t.of(r)).collect();
            (t, derivative_correlation(&series, &loss).unwrap_or(f64::NAN))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRow {
    pub schema: u32,
    pub tau: f64,
    pub term: &'static str,
    pub rho: f64,
}

fn correlation_plot(rows: &[CorrelationRow]) -> LinePlot {
    LinePlot {
        title: "Correlation of term and loss derivatives".into(),
        x_label: "tau".into(),
        y_label: "rho".into(),
        log_x: true,
        series: Term::ALL
            .iter()
            .map(|t| Series {
                name: t.name().into(),
                points: rows.iter().filter(|r| r.term == t.name()).map(|r| (r.tau, r.rho)).collect(),
            })
            .collect(),
    }
}

fn sweep_config(config: &ExperimentConfig, tau: f64) -> TrainConfig {
    TrainConfig {
        strategy: Strategy::SupContrLcp,
        temperature_schedule: TemperatureSchedule::Constant { tau },
        ..config.train.clone()
    }
}

/// One contrastive run per grid temperature; writes
/// `sweep/correlation.{csv,svg}`.
pub fn cmd_sweep_tau(config: &ExperimentConfig) -> Result<Vec<CorrelationRow>, CliError> {
    let data = load_data(config)?;
    let paths = OutputPaths::new(config);
    let per_tau: Vec<Vec<CorrelationRow>> = config
        .sweep
        .tau_grid
        .par_iter()
        .map(|&tau| {
            let (_, log) = train_run(&sweep_config(config, tau), &data, &paths.sweep_run(tau))?;
            Ok(correlations(&log)
                .into_iter()
                .map(|(t, rho)| CorrelationRow {
                    schema: TABLE_SCHEMA_VERSION,
                    tau,
                    term: t.name(),
                    rho,
                })
                .collect())
        })
        .collect::<Result<_, CliError>>()?;
    let rows: Vec<CorrelationRow> = per_tau.into_iter().flatten().collect();
    correlation_plot(&rows).save(&paths.sweep(), "correlation")?;
    Ok(rows)
}

/// Runs the verification suite and writes `verify/verification.json`.
pub fn cmd_verify(config: &ExperimentConfig) -> Result<VerificationReport, CliError> {
    let report = run_suite(&config.verify);
    let dir = OutputPaths::new(config).verify();
    create_dir(&dir)?;
    write_json(&dir.join("verification.json"), &report)?;
    Ok(report)
}

fn decomposition_plot(strategy: Strategy, log: &ExperimentLog) -> LinePlot {
    let series = |name: &str, f: &dyn Fn(&ctda_core::trainer::EpochRecord) -> f64| Series {
        name: name.into(),
        points: log.records.iter().map(|r| (r.epoch as f64, f(r))).collect(),
    };
    LinePlot {
        title: format!("Decomposition terms, {}", strategy.name()),
        x_label: "epoch".into(),
        y_label: "value".into(),
        log_x: false,
        series: vec![
            series("scaled_loss", &|r| r.tau * r.contrastive_loss),
            series("cmmd_sq", &|r| r.cmmd_sq),
            series("term_a", &|r| r.term_a),
            series("term_b", &|r| r.term_b),
            series("term_c", &|r| r.term_c),
            series("residual", &|r| r.residual),
        ],
    }
}

#[derive(Debug, Clone, Serialize)]
struct StrategyRow {
    schema: u32,
    strategy: &'static str,
    selected_epoch: usize,
    val_ovo_auc: f64,
    test_accuracy: f64,
    test_ovo_auc: f64,
    test_ovr_auc: f64,
    test_cmmd_sq: f64,
    test_dcmmd_sq: f64,
}

fn read_summary(path: &Path) -> Result<RunSummary, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let s: RunSummary = serde_json::from_str(&text).map_err(|e| io_err(path, e))?;
    if s.schema != SUMMARY_SCHEMA_VERSION {
        return Err(io_err(path, format!("summary schema {} (expected {SUMMARY_SCHEMA_VERSION})", s.schema)));
    }
    Ok(s)
}

/// Collects finished runs and sweeps into `report/`. Returns the files
/// written, relative to the report directory.
pub fn cmd_report(config: &ExperimentConfig) -> Result<Vec<String>, CliError> {
    let paths = OutputPaths::new(config);
    let dir = paths.report();
    create_dir(&dir)?;
    let mut written = Vec::new();

    let mut table = Vec::new();
    for strategy in Strategy::ALL {
        let run = paths.run(strategy);
        if !run.join(LOG_FILE).exists() {
            continue;
        }
        let log = ExperimentLog::load(&run.join(LOG_FILE))?;
        let stem = format!("decomposition_{}", strategy.name());
        decomposition_plot(strategy, &log).save(&dir, &stem)?;
        written.extend([format!("{stem}.csv"), format!("{stem}.svg")]);
        let s = read_summary(&run.join(SUMMARY_FILE))?;
        table.push(StrategyRow {
            schema: TABLE_SCHEMA_VERSION,
            strategy: strategy.name(),
            selected_epoch: s.selected_epoch,
            val_ovo_auc: s.validation.ovo_auc,
            test_accuracy: s.test.accuracy,
            test_ovo_auc: s.test.ovo_auc,
            test_ovr_auc: s.test.ovr_auc,
            test_cmmd_sq: s.test.cmmd_sq,
            test_dcmmd_sq: s.test.dcmmd_sq,
        });
    }
    if !table.is_empty() {
        let path = dir.join("strategies.csv");
        let mut w = csv::Writer::from_path(&path).map_err(|e| io_err(&path, e))?;
        for row in &table {
            w.serialize(row).map_err(|e| io_err(&path, e))?;
        }
        w.flush().map_err(|e| io_err(&path, e))?;
        written.push("strategies.csv".into());
    }

    let mut rows = Vec::new();
    for &tau in &config.sweep.tau_grid {
        let log_path = paths.sweep_run(tau).join(LOG_FILE);
        if !log_path.exists() {
            continue;
        }
        let log = ExperimentLog::load(&log_path)?;
        rows.extend(correlations(&log).into_iter().map(|(t, rho)| CorrelationRow {
            schema: TABLE_SCHEMA_VERSION,
            tau,
            term: t.name(),
            rho,
        }));
    }
    if !rows.is_empty() {
        correlation_plot(&rows).save(&dir, "correlation")?;
        written.extend(["correlation.csv".into(), "correlation.svg".into()]);
    }
    if written.is_empty() {
        return Err(CliError::Io(format!(
            "nothing to report under {}; run `ctda train` or `ctda sweep-tau` first",
            paths.root.display()
        )));
    }
    Ok(written)
}
