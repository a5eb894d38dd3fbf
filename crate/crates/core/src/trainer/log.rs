//! Per-epoch experiment log and its CSV schema.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::theory::DecompositionRecord;
use crate::{Error, Result};

pub const LOG_SCHEMA_VERSION: u32 = 1;
pub const LOG_FILE: &str = "log.csv";

/// Column order of `log.csv`. Reading a file with any other header fails.
pub const LOG_COLUMNS: [&str; 20] = [
    "schema",
    "epoch",
    "phase",
    "phase_epoch",
    "lr",
    "tau",
    "train_loss",
    "val_accuracy",
    "val_ovo_auc",
    "val_loss",
    "contrastive_loss",
    "cmmd_sq",
    "dcmmd_sq",
    "cmmd_quarter",
    "term_a",
    "term_b",
    "term_c",
    "log_const",
    "residual",
    "selected",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Feature map trained with the supervised contrastive loss.
    Contrastive,
    /// Feature map frozen, linear head trained with cross-entropy.
    LinearProbe,
    /// All parameters trained with cross-entropy.
    CrossEntropy,
}

/// One logged epoch. Decomposition columns are evaluated on a fixed
/// balanced monitor batch drawn from the training split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpochRecord {
    pub schema: u32,
    pub epoch: usize,
    pub phase: Phase,
    pub phase_epoch: usize,
    pub lr: f64,
    pub tau: f64,
    pub train_loss: f64,
    pub val_accuracy: f64,
    pub val_ovo_auc: f64,
    pub val_loss: f64,
    /// Unscaled supervised contrastive loss on the monitor batch.
    pub contrastive_loss: f64,
    pub cmmd_sq: f64,
    pub dcmmd_sq: f64,
    pub cmmd_quarter: f64,
    pub term_a: f64,
    pub term_b: f64,
    pub term_c: f64,
    pub log_const: f64,
    pub residual: f64,
    /// True on the row whose parameters were retained.
    pub selected: bool,
}

impl EpochRecord {
    pub fn decomposition(&self) -> DecompositionRecord {
        DecompositionRecord {
            tau: self.tau,
            loss: self.contrastive_loss,
            cmmd_quarter: self.cmmd_quarter,
            term_a: self.term_a,
            term_b: self.term_b,
            term_c: self.term_c,
            log_const: self.log_const,
            residual: self.residual,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExperimentLog {
    pub records: Vec<EpochRecord>,
}

impl ExperimentLog {
    pub fn phase(&self, phase: Phase) -> impl Iterator<Item = &EpochRecord> {
        self.records.iter().filter(move |r| r.phase == phase)
    }

    pub fn selected(&self) -> Option<&EpochRecord> {
        self.records.iter().find(|r| r.selected)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> std::result::Result<(), csv::Error> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
        w.write_record(LOG_COLUMNS)?;
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(file).map_err(|e| Error::Csv {
            path: path.to_path_buf(),
            source: e,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let csv_err = |e| Error::Csv {
            path: path.to_path_buf(),
            source: e,
        };
        let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
        let header: Vec<String> = r.headers().map_err(csv_err)?.iter().map(str::to_owned).collect();
        if header != LOG_COLUMNS {
            return Err(Error::Schema {
                path: path.to_path_buf(),
                detail: format!("log columns {header:?} do not match {LOG_COLUMNS:?}"),
            });
        }
        let mut records = Vec::new();
        for row in r.deserialize() {
            let rec: EpochRecord = row.map_err(csv_err)?;
            if rec.schema != LOG_SCHEMA_VERSION {
                return Err(Error::Schema {
                    path: path.to_path_buf(),
                    detail: format!("row schema {} (expected {LOG_SCHEMA_VERSION})", rec.schema),
                });
            }
            records.push(rec);
        }
        Ok(Self { records })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(epoch: usize) -> EpochRecord {
        EpochRecord {
            schema: LOG_SCHEMA_VERSION,
            epoch,
            phase: Phase::Contrastive,
            phase_epoch: epoch,
            lr: 0.1 / 3.0,
            tau: 0.5,
            train_loss: 1.0 + epoch as f64 * 1e-17,
            val_accuracy: 0.75,
            val_ovo_auc: 0.9,
            val_loss: 0.3,
            contrastive_loss: 2.0,
            cmmd_sq: 1e-300,
            dcmmd_sq: 0.2,
            cmmd_quarter: 0.05,
            term_a: 0.1,
            term_b: 0.7,
            term_c: 0.01,
            log_const: 1.2,
            residual: -0.03,
            selected: epoch == 1,
        }
    }

    #[test]
    fn round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(LOG_FILE);
        let log = ExperimentLog {
            records: (0..3).map(row).collect(),
        };
        log.save(&path).unwrap();
        assert_eq!(ExperimentLog::load(&path).unwrap(), log);
        assert_eq!(log.selected().unwrap().epoch, 1);
    }

    #[test]
    fn header_matches_field_order() {
        let mut buf = Vec::new();
        csv::Writer::from_writer(&mut buf).serialize(row(0)).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), LOG_COLUMNS.join(","));
    }

    #[test]
    fn column_mismatch_is_a_schema_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(LOG_FILE);
        let log = ExperimentLog { records: vec![row(0)] };
        let mut buf = Vec::new();
        log.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap().replacen("term_b", "term_x", 1);
        std::fs::write(&path, text).unwrap();
        assert!(matches!(ExperimentLog::load(&path), Err(Error::Schema { .. })));
    }
}
