//! Experiment configuration.

use std::fs;
use std::path::{Path, PathBuf};

use ctda_core::synthgen::{DatasetMode, GeneratorConfig};
use ctda_core::trainer::{Strategy, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Environment variable that replaces `outputs` when set.
pub const OUTPUT_ENV: &str = "CTDA_OUT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub n_patches: usize,
    pub mode: DatasetMode,
    pub split_seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            n_patches: 999,
            mode: DatasetMode::Mixed,
            split_seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub tau_grid: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            tau_grid: vec![0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0, 2.0, 5.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    /// Random batches per Monte Carlo check.
    pub trials: usize,
    pub seed: u64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self { trials: 100, seed: 2024 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub generator: GeneratorConfig,
    pub dataset: DatasetConfig,
    pub train: TrainConfig,
    /// Strategies run by `train`; empty means `train.strategy` alone.
    pub strategies: Vec<Strategy>,
    pub sweep: SweepConfig,
    pub verify: VerifyConfig,
    pub outputs: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            generator: GeneratorConfig::default(),
            dataset: DatasetConfig::default(),
            train: TrainConfig {
                base_lr: 0.05,
                ..TrainConfig::default()
            },
            strategies: Strategy::ALL.to_vec(),
            sweep: SweepConfig::default(),
            verify: VerifyConfig::default(),
            outputs: PathBuf::from("ctda-out"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let config: Self = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.generator.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.train.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if self.sweep.tau_grid.is_empty() {
            return Err(CliError::Config("sweep.tau_grid must be nonempty".into()));
        }
        if let Some(t) = self.sweep.tau_grid.iter().find(|t| !(**t > 0.0 && t.is_finite())) {
            return Err(CliError::Config(format!("sweep temperature {t} must be positive")));
        }
        if self.verify.trials == 0 {
            return Err(CliError::Config("verify.trials must be positive".into()));
        }
        Ok(())
    }

    /// Replaces every seed with `seed`.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.generator.seed = seed;
        self.train.seed = seed;
        self.verify.seed = seed;
        self
    }

    pub fn strategies(&self) -> Vec<Strategy> {
        if self.strategies.is_empty() {
            vec![self.train.strategy]
        } else {
            self.strategies.clone()
        }
    }

    /// Output root, honouring [`OUTPUT_ENV`].
    pub fn output_root(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_ENV) {
            Some(dir) if !dir.is_empty() => PathBuf::from(dir),
            _ => self.outputs.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_the_default() {
        assert_eq!(ExperimentConfig::from_json("{}").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::from_json(r#"{"sweep": {"tau_gird": [0.5]}}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"train": {"lr": 0.1}}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"output": "x"}"#).is_err());
    }

    #[test]
    fn invalid_values_are_config_errors() {
        for doc in [
            r#"{"sweep": {"tau_grid": []}}"#,
            r#"{"sweep": {"tau_grid": [0.5, -1]}}"#,
            r#"{"train": {"batch_size": 0}}"#,
            r#"{"train": {"temperature_schedule": {"kind": "constant", "tau": 0}}}"#,
        ] {
            assert!(matches!(ExperimentConfig::from_json(doc), Err(CliError::Config(_))), "{doc}");
        }
    }

    #[test]
    fn round_trips_through_json() {
        let c = ExperimentConfig::default().with_seed(11);
        let text = serde_json::to_string_pretty(&c).unwrap();
        assert_eq!(ExperimentConfig::from_json(&text).unwrap(), c);
        assert_eq!(c.generator.seed, 11);
    }
}
