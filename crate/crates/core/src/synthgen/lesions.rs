use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ClassLabel, GeneratorConfig, LesionParams, Patch};
use crate::{Error, Result};

/// Axis-aligned Gaussian mass. `sigma_row` / `sigma_col` are the per-axis
/// standard deviations in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MassGeometry {
    pub center_row: usize,
    pub center_col: usize,
    pub sigma_row: f64,
    pub sigma_col: f64,
    /// Target intensity of the center pixel after insertion.
    pub peak_intensity: f64,
}

impl MassGeometry {
    pub fn sample<R: Rng + ?Sized>(config: &GeneratorConfig, rng: &mut R) -> Self {
        let n = config.patch_size;
        Self {
            center_row: rng.random_range(0..n),
            center_col: rng.random_range(0..n),
            sigma_row: config.mass_radius_range.sample(rng),
            sigma_col: config.mass_radius_range.sample(rng),
            peak_intensity: config.mass_intensity_range.sample(rng),
        }
    }
}

/// Adds the Gaussian bump to a normal patch. The amplitude is solved so
/// the center pixel lands on `peak_intensity`; where the texture is already
/// brighter than that the amplitude is clamped to zero. The result is
/// clipped to `[0, 1]`.
pub fn insert_mass(patch: &Patch, geometry: &MassGeometry) -> Result<Patch> {
    check_normal(patch)?;
    let (rows, cols) = patch.pixels.dim();
    let g = geometry;
    if g.center_row >= rows || g.center_col >= cols {
        return Err(Error::InvalidArgument(format!(
            "mass center ({}, {}) outside {rows}x{cols} patch",
            g.center_row, g.center_col
        )));
    }
    if !(g.sigma_row > 0.0 && g.sigma_col > 0.0) {
        return Err(Error::InvalidArgument("mass radii must be positive".into()));
    }
    if !(g.peak_intensity > 0.0 && g.peak_intensity <= 1.0) {
        return Err(Error::InvalidArgument(
            "mass peak intensity must lie in (0, 1]".into(),
        ));
    }

    let amplitude = (g.peak_intensity - patch.pixels[[g.center_row, g.center_col]]).max(0.0);
    let mut out = patch.clone();
    let inv_r = 1.0 / (2.0 * g.sigma_row * g.sigma_row);
    let inv_c = 1.0 / (2.0 * g.sigma_col * g.sigma_col);
    for ((r, c), px) in out.pixels.indexed_iter_mut() {
        let dr = r as f64 - g.center_row as f64;
        let dc = c as f64 - g.center_col as f64;
        let bump = amplitude * (-(dr * dr * inv_r + dc * dc * inv_c)).exp();
        *px = (*px + bump).clamp(0.0, 1.0);
    }
    out.class_label = ClassLabel::Mass;
    out.provenance.lesion = Some(LesionParams::Mass {
        geometry: *g,
        amplitude,
    });
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalcDot {
    pub row: usize,
    pub col: usize,
    pub intensity: f64,
}

/// A calcification cluster: dots placed inside the square
/// `[origin_row, origin_row + side) x [origin_col, origin_col + side)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalcCluster {
    pub origin_row: usize,
    pub origin_col: usize,
    pub side: usize,
    pub dots: Vec<CalcDot>,
}

/// Dot footprint: the radius-1 disc.
const DOT_OFFSETS: [(isize, isize); 5] = [(0, 0), (-1, 0), (1, 0), (0, -1), (0, 1)];

impl CalcCluster {
    pub fn sample<R: Rng + ?Sized>(config: &GeneratorConfig, rng: &mut R) -> Self {
        let n = config.patch_size;
        let side = config.calc_area_side_range.sample(rng);
        // Leave one pixel of margin on each side for the dot footprint.
        let origin_row = rng.random_range(1..=n - side - 1);
        let origin_col = rng.random_range(1..=n - side - 1);
        let count = config.calc_count_range.sample(rng);
        let dots = (0..count)
            .map(|_| CalcDot {
                row: origin_row + rng.random_range(0..side),
                col: origin_col + rng.random_range(0..side),
                intensity: config.calc_intensity_range.sample(rng),
            })
            .collect();
        Self {
            origin_row,
            origin_col,
            side,
            dots,
        }
    }
}

/// Overwrites a radius-1 disc at every dot of the cluster.
pub fn insert_calcifications(patch: &Patch, cluster: &CalcCluster) -> Result<Patch> {
    check_normal(patch)?;
    let (rows, cols) = patch.pixels.dim();
    let cl = cluster;
    if cl.side == 0
        || cl.origin_row == 0
        || cl.origin_col == 0
        || cl.origin_row + cl.side + 1 > rows
        || cl.origin_col + cl.side + 1 > cols
    {
        return Err(Error::InvalidArgument(format!(
            "cluster square at ({}, {}) side {} not inside {rows}x{cols} patch",
            cl.origin_row, cl.origin_col, cl.side
        )));
    }
    let mut out = patch.clone();
    for dot in &cl.dots {
        let inside = (cl.origin_row..cl.origin_row + cl.side).contains(&dot.row)
            && (cl.origin_col..cl.origin_col + cl.side).contains(&dot.col);
        if !inside {
            return Err(Error::InvalidArgument(format!(
                "dot ({}, {}) outside its cluster square",
                dot.row, dot.col
            )));
        }
        if !(dot.intensity > 0.0 && dot.intensity <= 1.0) {
            return Err(Error::InvalidArgument(
                "dot intensity must lie in (0, 1]".into(),
            ));
        }
        for (dr, dc) in DOT_OFFSETS {
            let r = (dot.row as isize + dr) as usize;
            let c = (dot.col as isize + dc) as usize;
            out.pixels[[r, c]] = dot.intensity;
        }
    }
    out.class_label = ClassLabel::Calcification;
    out.provenance.lesion = Some(LesionParams::Calcification(cluster.clone()));
    Ok(out)
}

fn check_normal(patch: &Patch) -> Result<()> {
    if patch.class_label != ClassLabel::Normal || patch.provenance.lesion.is_some() {
        return Err(Error::Pipeline(format!(
            "lesions are inserted into normal patches only, got {:?}",
            patch.class_label
        )));
    }
    Ok(())
}
