//! Synthetic mammography patches: power-law Gaussian texture, simulated
//! masses and calcification clusters, and the sigmoid LUT used as the
//! domain shift.

mod dataset;
mod lesions;
mod lut;
mod texture;

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use dataset::{
    case_seed, decode_png16, encode_png16, generate_dataset, quantize, read_manifest,
    regenerate_record, verify_dataset, DatasetMode, Manifest, PatchRecord, MANIFEST_FILE,
    MANIFEST_SCHEMA_VERSION, PATCH_DIR,
};
pub use lesions::{insert_calcifications, insert_mass, CalcCluster, CalcDot, MassGeometry};
pub use lut::{apply_lut, lut_value, LutParams};
pub use texture::{radial_power_spectrum, sample_texture, spectral_slope, transfer};

/// Closed real interval `[low, high]`, serialized as a two-element array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Interval {
    pub low: f64,
    pub high: f64,
}

impl Interval {
    pub const fn new(low: f64, high: f64) -> Self {
        Self { low, high }
    }

    fn is_valid(&self) -> bool {
        self.low.is_finite() && self.high.is_finite() && self.low <= self.high
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.low == self.high {
            self.low
        } else {
            rng.random_range(self.low..=self.high)
        }
    }
}

impl From<[f64; 2]> for Interval {
    fn from(v: [f64; 2]) -> Self {
        Self::new(v[0], v[1])
    }
}

impl From<Interval> for [f64; 2] {
    fn from(i: Interval) -> Self {
        [i.low, i.high]
    }
}

/// Closed integer interval `[low, high]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct CountRange {
    pub low: usize,
    pub high: usize,
}

impl CountRange {
    pub const fn new(low: usize, high: usize) -> Self {
        Self { low, high }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        rng.random_range(self.low..=self.high)
    }
}

impl From<[usize; 2]> for CountRange {
    fn from(v: [usize; 2]) -> Self {
        Self::new(v[0], v[1])
    }
}

impl From<CountRange> for [usize; 2] {
    fn from(r: CountRange) -> Self {
        [r.low, r.high]
    }
}

/// Parameters of the patch generator. Defaults reproduce the published
/// synthetic dataset settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub patch_size: usize,
    pub beta_range: Interval,
    /// Gaussian standard deviations of a mass, per axis, in pixels.
    pub mass_radius_range: Interval,
    pub mass_intensity_range: Interval,
    pub calc_count_range: CountRange,
    pub calc_area_side_range: CountRange,
    pub calc_intensity_range: Interval,
    pub lut: LutParams,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            patch_size: 256,
            beta_range: Interval::new(1.2, 1.6),
            mass_radius_range: Interval::new(5.0, 45.0),
            mass_intensity_range: Interval::new(0.90, 1.00),
            calc_count_range: CountRange::new(5, 12),
            calc_area_side_range: CountRange::new(15, 60),
            calc_intensity_range: Interval::new(0.90, 1.00),
            lut: LutParams::default(),
            seed: 0x5EED_CAFE,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.patch_size < 16 {
            return bad(format!("patch_size {} < 16", self.patch_size));
        }
        if !self.patch_size.is_multiple_of(2) {
            return bad(format!("patch_size {} must be even", self.patch_size));
        }
        for (name, iv) in [
            ("beta_range", self.beta_range),
            ("mass_radius_range", self.mass_radius_range),
            ("mass_intensity_range", self.mass_intensity_range),
            ("calc_intensity_range", self.calc_intensity_range),
        ] {
            if !iv.is_valid() {
                return bad(format!("{name} [{}, {}] is empty", iv.low, iv.high));
            }
        }
        if self.beta_range.low < 0.0 {
            return bad("beta_range must be non-negative".into());
        }
        if self.mass_radius_range.low <= 0.0 {
            return bad("mass_radius_range must be positive".into());
        }
        for (name, iv) in [
            ("mass_intensity_range", self.mass_intensity_range),
            ("calc_intensity_range", self.calc_intensity_range),
        ] {
            if iv.low <= 0.0 || iv.high > 1.0 {
                return bad(format!("{name} must lie within (0, 1]"));
            }
        }
        for (name, r) in [
            ("calc_count_range", self.calc_count_range),
            ("calc_area_side_range", self.calc_area_side_range),
        ] {
            if r.low > r.high {
                return bad(format!("{name} [{}, {}] is empty", r.low, r.high));
            }
        }
        if self.calc_count_range.low == 0 {
            return bad("calc_count_range must start at 1 or more".into());
        }
        // The cluster square plus the one-pixel dot margin must fit.
        if self.calc_area_side_range.low == 0
            || self.calc_area_side_range.high + 2 > self.patch_size
        {
            return bad(format!(
                "calc_area_side_range [{}, {}] does not fit a {} px patch",
                self.calc_area_side_range.low, self.calc_area_side_range.high, self.patch_size
            ));
        }
        self.lut.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassLabel {
    Normal,
    Mass,
    Calcification,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 3] = [ClassLabel::Normal, ClassLabel::Mass, ClassLabel::Calcification];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Raw,
    Lut,
}

impl Domain {
    pub fn bit(self) -> u8 {
        match self {
            Domain::Raw => 0,
            Domain::Lut => 1,
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Domain::Raw => "raw",
            Domain::Lut => "lut",
        })
    }
}

impl FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(Domain::Raw),
            "lut" => Ok(Domain::Lut),
            other => Err(Error::InvalidArgument(format!("unknown domain {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LesionParams {
    Mass {
        #[serde(flatten)]
        geometry: MassGeometry,
        amplitude: f64,
    },
    Calcification(CalcCluster),
}

/// Everything needed to regenerate a patch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub beta: f64,
    pub lesion: Option<LesionParams>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    /// Row-major intensities in `[0, 1]`.
    pub pixels: Array2<f64>,
    pub class_label: ClassLabel,
    pub domain: Domain,
    pub provenance: Provenance,
}

impl Patch {
    pub fn side(&self) -> usize {
        self.pixels.nrows()
    }
}

/// Stream used for lesion and β draws; the texture noise uses stream 0 of
/// the same seed.
const PARAM_STREAM: u64 = 1;

fn param_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(PARAM_STREAM);
    rng
}

/// Generates one raw-domain patch of the given class from a per-patch seed.
pub fn generate_patch(config: &GeneratorConfig, class: ClassLabel, seed: u64) -> Result<Patch> {
    config.validate()?;
    let mut rng = param_rng(seed);
    let beta = config.beta_range.sample(&mut rng);
    let base = sample_texture(config, beta, seed)?;
    match class {
        ClassLabel::Normal => Ok(base),
        ClassLabel::Mass => {
            let geometry = MassGeometry::sample(config, &mut rng);
            insert_mass(&base, &geometry)
        }
        ClassLabel::Calcification => {
            let cluster = CalcCluster::sample(config, &mut rng);
            insert_calcifications(&base, &cluster)
        }
    }
}
