//! Learning-rate and temperature schedules.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// `base_lr·(1 + cos(π·(epoch mod T)/T))/2`.
pub fn cosine_lr(base_lr: f64, epoch: usize, period: usize) -> f64 {
    let t = (epoch % period) as f64 / period as f64;
    base_lr * (1.0 + (PI * t).cos()) / 2.0
}

/// Temperature as a function of the epoch within the contrastive phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum TemperatureSchedule {
    Constant { tau: f64 },
    /// Holds `start` for `hold_epochs`, then decays linearly to `end` over
    /// `decay_epochs` and stays there.
    Staged {
        start: f64,
        end: f64,
        hold_epochs: usize,
        decay_epochs: usize,
    },
}

impl Default for TemperatureSchedule {
    fn default() -> Self {
        TemperatureSchedule::Constant { tau: 0.5 }
    }
}

impl TemperatureSchedule {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            TemperatureSchedule::Constant { tau } => tau > 0.0 && tau.is_finite(),
            TemperatureSchedule::Staged { start, end, .. } => {
                start > 0.0 && end > 0.0 && start.is_finite() && end.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("temperatures must be positive and finite: {self:?}")))
        }
    }

    pub fn at(&self, epoch: usize) -> f64 {
        match *self {
            TemperatureSchedule::Constant { tau } => tau,
            TemperatureSchedule::Staged {
                start,
                end,
                hold_epochs,
                decay_epochs,
            } => {
                if epoch < hold_epochs {
                    start
                } else if decay_epochs == 0 || epoch >= hold_epochs + decay_epochs {
                    end
                } else {
                    let f = (epoch - hold_epochs) as f64 / decay_epochs as f64;
                    start + (end - start) * f
                }
            }
        }
    }
}
