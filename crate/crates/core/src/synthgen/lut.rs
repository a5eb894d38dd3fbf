use serde::{Deserialize, Serialize};

use super::{Domain, Patch};
use crate::{Error, Result};

/// Sigmoid contrast curve `σ((p - center) / width)`, rescaled so that the
/// input range `[0, 1]` maps onto `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LutParams {
    pub center: f64,
    pub width: f64,
}

impl Default for LutParams {
    fn default() -> Self {
        Self {
            center: 0.5,
            width: 0.15,
        }
    }
}

impl LutParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.width > 0.0) || !self.width.is_finite() {
            return Err(Error::Config(format!("LUT width must be > 0, got {}", self.width)));
        }
        if !(self.center > 0.0 && self.center < 1.0) {
            return Err(Error::Config(format!(
                "LUT center must lie in (0, 1), got {}",
                self.center
            )));
        }
        Ok(())
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// The raw sigmoid before endpoint rescaling.
pub(crate) fn lut_sigmoid(p: f64, params: &LutParams) -> f64 {
    sigmoid((p - params.center) / params.width)
}

pub fn lut_value(p: f64, params: &LutParams) -> f64 {
    let lo = lut_sigmoid(0.0, params);
    let hi = lut_sigmoid(1.0, params);
    ((lut_sigmoid(p, params) - lo) / (hi - lo)).clamp(0.0, 1.0)
}

/// Maps a raw patch into the LUT domain.
pub fn apply_lut(patch: &Patch, params: &LutParams) -> Result<Patch> {
    params.validate()?;
    if patch.domain == Domain::Lut {
        return Err(Error::Pipeline(
            "LUT applied to a patch already in the LUT domain".into(),
        ));
    }
    let mut out = patch.clone();
    out.pixels.mapv_inplace(|p| lut_value(p, params));
    out.domain = Domain::Lut;
    Ok(out)
}
