//! Input encodings turning a patch into a fixed-length vector.

use ndarray::Array2;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::fft2::{signed_freq, Fft2};
use crate::{Error, Result};

/// Variance floor below which a pooled image is treated as constant.
pub const VARIANCE_FLOOR: f64 = 1e-8;

/// Percentile levels (0–100) summarizing each response map.
pub const PERCENTILES: [f64; 13] = [
    0.0, 1.0, 5.0, 25.0, 50.0, 75.0, 90.0, 95.0, 98.0, 99.0, 99.5, 99.9, 100.0,
];
/// Scales of the scale-normalized Laplacian-of-Gaussian responses.
pub const BLOB_SCALES: [f64; 10] = [1.0, 1.4, 2.0, 2.8, 4.0, 5.6, 8.0, 11.0, 16.0, 23.0];
/// Scales of the scale-normalized gradient-magnitude responses.
pub const EDGE_SCALES: [f64; 4] = [2.0, 4.0, 8.0, 16.0];
/// Intensity thresholds for the bright-pixel fractions.
pub const BRIGHT_THRESHOLDS: [f64; 7] = [0.9, 0.95, 0.98, 0.99, 0.995, 0.999, 0.9999];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
#[derive(Default)]
pub enum InputEncoding {
    /// Block-average pooling to `side × side`, flattened and standardized
    /// per image.
    Pooled { side: usize },
    /// Translation-invariant descriptor: percentiles of intensity and of
    /// multi-scale blob and edge responses, plus bright-pixel fractions.
    #[default]
    Descriptor,
}


impl InputEncoding {
    pub fn dim(&self) -> usize {
        match *self {
            InputEncoding::Pooled { side } => side * side,
            InputEncoding::Descriptor => descriptor_dim(),
        }
    }

    pub fn encode(&self, pixels: &Array2<f64>) -> Result<Vec<f64>> {
        match *self {
            InputEncoding::Pooled { side } => featurize(pixels, side),
            InputEncoding::Descriptor => descriptor(pixels),
        }
    }
}

/// Block-average pools a square image to `target_side × target_side`,
/// flattens row-major and standardizes to zero mean and unit variance.
/// Images whose pooled variance is below [`VARIANCE_FLOOR`] map to zeros.
pub fn featurize(pixels: &Array2<f64>, target_side: usize) -> Result<Vec<f64>> {
    let pooled = pool(pixels, target_side)?;
    let n = pooled.len() as f64;
    let mean = pooled.iter().sum::<f64>() / n;
    let var = pooled.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    if var < VARIANCE_FLOOR {
        return Ok(vec![0.0; pooled.len()]);
    }
    let sd = var.sqrt();
    Ok(pooled.iter().map(|v| (v - mean) / sd).collect())
}

/// Block means, without standardization.
pub fn pool(pixels: &Array2<f64>, target_side: usize) -> Result<Array2<f64>> {
    let (rows, cols) = pixels.dim();
    if target_side == 0 || rows % target_side != 0 || cols % target_side != 0 {
        return Err(Error::InvalidArgument(format!(
            "target side {target_side} does not divide patch {rows}x{cols}"
        )));
    }
    let (br, bc) = (rows / target_side, cols / target_side);
    let mut out = Array2::zeros((target_side, target_side));
    for ((r, c), &v) in pixels.indexed_iter() {
        out[[r / br, c / bc]] += v;
    }
    out.mapv_inplace(|s| s / (br * bc) as f64);
    Ok(out)
}

pub fn descriptor_dim() -> usize {
    PERCENTILES.len() * (1 + BLOB_SCALES.len() + EDGE_SCALES.len()) + BRIGHT_THRESHOLDS.len()
}

/// Linear-interpolation percentiles of `values` (sorted in place).
pub fn percentiles(values: &mut [f64], levels: &[f64]) -> Vec<f64> {
    values.sort_by(|a, b| a.total_cmp(b));
    let last = (values.len() - 1) as f64;
    levels
        .iter()
        .map(|&q| {
            let pos = q / 100.0 * last;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            values[lo] + (values[hi] - values[lo]) * (pos - lo as f64)
        })
        .collect()
}

/// Computes the descriptor with periodic boundary handling. Requires a
/// square image.
pub fn descriptor(pixels: &Array2<f64>) -> Result<Vec<f64>> {
    let (n, cols) = pixels.dim();
    if n != cols || n < 2 {
        return Err(Error::InvalidArgument(format!(
            "descriptor needs a square image, got {n}x{cols}"
        )));
    }
    let mut out = Vec::with_capacity(descriptor_dim());
    let mut flat: Vec<f64> = pixels.iter().copied().collect();
    let total = flat.len() as f64;
    for t in BRIGHT_THRESHOLDS {
        out.push(flat.iter().filter(|&&p| p >= t).count() as f64 / total);
    }
    out.extend(percentiles(&mut flat, &PERCENTILES));

    let fft = Fft2::new(n);
    let mut spectrum: Vec<Complex64> = pixels.iter().map(|&p| Complex64::new(p, 0.0)).collect();
    fft.forward(&mut spectrum);
    let omega: Vec<f64> = (0..n)
        .map(|k| 2.0 * std::f64::consts::PI * signed_freq(k, n) / n as f64)
        .collect();
    let nyquist = n / 2;

    let mut buf = vec![Complex64::new(0.0, 0.0); n * n];
    for &s in &BLOB_SCALES {
        for r in 0..n {
            for c in 0..n {
                let w2 = omega[r] * omega[r] + omega[c] * omega[c];
                // −σ²·∇²(G_σ * I)
                let h = s * s * w2 * (-0.5 * s * s * w2).exp();
                buf[r * n + c] = spectrum[r * n + c] * h;
            }
        }
        fft.inverse(&mut buf);
        let mut resp: Vec<f64> = buf.iter().map(|v| v.re).collect();
        out.extend(percentiles(&mut resp, &PERCENTILES));
    }

    let mut gy = vec![Complex64::new(0.0, 0.0); n * n];
    for &s in &EDGE_SCALES {
        for r in 0..n {
            for c in 0..n {
                let w2 = omega[r] * omega[r] + omega[c] * omega[c];
                let g = spectrum[r * n + c] * (-0.5 * s * s * w2).exp();
                let dr = if r == nyquist { 0.0 } else { omega[r] };
                let dc = if c == nyquist { 0.0 } else { omega[c] };
                buf[r * n + c] = g * Complex64::new(0.0, dr);
                gy[r * n + c] = g * Complex64::new(0.0, dc);
            }
        }
        fft.inverse(&mut buf);
        fft.inverse(&mut gy);
        let mut mag: Vec<f64> = buf
            .iter()
            .zip(&gy)
            .map(|(a, b)| s * (a.re * a.re + b.re * b.re).sqrt())
            .collect();
        out.extend(percentiles(&mut mag, &PERCENTILES));
    }
    Ok(out)
}

/// Per-feature map onto standard-normal scores through the empirical
/// quantiles of a reference sample.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileNormalizer {
    /// `knots[[j, q]]`: the feature-`j` value at reference level `q/(Q−1)`.
    knots: Array2<f64>,
}

/// Outer clip on reference levels before the inverse normal CDF.
const LEVEL_CLIP: f64 = 1e-7;

impl QuantileNormalizer {
    pub fn fit(rows: &Array2<f64>, n_quantiles: usize) -> Result<Self> {
        let (n, d) = rows.dim();
        if n < 2 || n_quantiles < 2 {
            return Err(Error::InvalidArgument(format!(
                "quantile normalizer needs >= 2 rows and >= 2 levels, got {n} and {n_quantiles}"
            )));
        }
        let q = n_quantiles.min(n);
        let levels: Vec<f64> = (0..q).map(|k| 100.0 * k as f64 / (q - 1) as f64).collect();
        let mut knots = Array2::zeros((d, q));
        for j in 0..d {
            let mut col: Vec<f64> = rows.column(j).to_vec();
            for (k, v) in percentiles(&mut col, &levels).into_iter().enumerate() {
                knots[[j, k]] = v;
            }
        }
        Ok(Self { knots })
    }

    pub fn from_knots(knots: Array2<f64>) -> Result<Self> {
        if knots.ncols() < 2 {
            return Err(Error::InvalidArgument("need at least two knots per feature".into()));
        }
        Ok(Self { knots })
    }

    pub fn knots(&self) -> &Array2<f64> {
        &self.knots
    }

    pub fn dim(&self) -> usize {
        self.knots.nrows()
    }

    fn level(&self, j: usize, x: f64) -> f64 {
        let row = self.knots.row(j);
        let q = row.len();
        let last = (q - 1) as f64;
        if x <= row[0] {
            // Ties at the lower edge map to the middle of the tied run.
            let run = row.iter().take_while(|&&v| v == row[0]).count();
            return if x < row[0] { 0.0 } else { (run - 1) as f64 / 2.0 / last };
        }
        if x >= row[q - 1] {
            let run = row.iter().rev().take_while(|&&v| v == row[q - 1]).count();
            return if x > row[q - 1] { 1.0 } else { (last - (run - 1) as f64 / 2.0) / last };
        }
        let first_ge = row.iter().position(|&v| v >= x).expect("bracketed");
        if row[first_ge] == x {
            let last_eq = first_ge + row.iter().skip(first_ge).take_while(|&&v| v == x).count() - 1;
            return (first_ge + last_eq) as f64 / 2.0 / last;
        }
        let (a, b) = (row[first_ge - 1], row[first_ge]);
        ((first_ge - 1) as f64 + (x - a) / (b - a)) / last
    }

    pub fn transform(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "normalizer expects {} features, got {}",
                self.dim(),
                x.len()
            )));
        }
        let normal = Normal::standard();
        Ok(x
            .iter()
            .enumerate()
            .map(|(j, &v)| normal.inverse_cdf(self.level(j, v).clamp(LEVEL_CLIP, 1.0 - LEVEL_CLIP)))
            .collect())
    }
}
