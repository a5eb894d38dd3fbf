use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex64;

use super::{ClassLabel, Domain, GeneratorConfig, Patch, Provenance};
use crate::fft2::{signed_freq, Fft2};
use crate::{Error, Result};

/// Power-law low-pass transfer function `(u² + v²)^(-β/2)`, with the
/// zero-frequency coefficient set to 0.
pub fn transfer(u: f64, v: f64, beta: f64) -> f64 {
    let r2 = u * u + v * v;
    if r2 == 0.0 {
        0.0
    } else {
        r2.powf(-beta / 2.0)
    }
}

/// Samples a normal-class texture: white Gaussian noise filtered by
/// [`transfer`] in the frequency domain, then min-max normalized.
pub fn sample_texture(config: &GeneratorConfig, beta: f64, seed: u64) -> Result<Patch> {
    if !(beta >= 0.0) || !beta.is_finite() {
        return Err(Error::InvalidArgument(format!("beta must be >= 0, got {beta}")));
    }
    let n = config.patch_size;
    if n < 2 || !n.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "patch dimensions must be even, got {n}"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut field: Vec<Complex64> = (0..n * n)
        .map(|_| Complex64::new(StandardNormal.sample(&mut rng), 0.0))
        .collect();

    let fft = Fft2::new(n);
    fft.forward(&mut field);
    for r in 0..n {
        let u = signed_freq(r, n);
        for c in 0..n {
            let v = signed_freq(c, n);
            field[r * n + c] *= transfer(u, v, beta);
        }
    }
    fft.inverse(&mut field);

    let real: Vec<f64> = field.iter().map(|c| c.re).collect();
    let pixels = min_max_normalize(&real)?;
    Ok(Patch {
        pixels: Array2::from_shape_vec((n, n), pixels).expect("square buffer"),
        class_label: ClassLabel::Normal,
        domain: Domain::Raw,
        provenance: Provenance {
            seed,
            beta,
            lesion: None,
        },
    })
}

fn min_max_normalize(values: &[f64]) -> Result<Vec<f64>> {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let scale = lo.abs().max(hi.abs());
    if !(hi - lo > 1e-12 * scale.max(f64::MIN_POSITIVE)) {
        return Err(Error::Degenerate(format!(
            "field is constant before normalization (min {lo}, max {hi})"
        )));
    }
    let span = hi - lo;
    Ok(values.iter().map(|&v| ((v - lo) / span).clamp(0.0, 1.0)).collect())
}

/// Radially averaged power spectrum: mean |F(u,v)|² over annuli of integer
/// radius `round(sqrt(u²+v²))`, for radii `1..=n/2`. Element `i` holds radius
/// `i + 1`.
pub fn radial_power_spectrum(pixels: &Array2<f64>) -> Vec<f64> {
    let n = pixels.nrows();
    assert_eq!(n, pixels.ncols(), "square image expected");
    let mut buf: Vec<Complex64> = pixels.iter().map(|&p| Complex64::new(p, 0.0)).collect();
    Fft2::new(n).forward(&mut buf);

    let max_r = n / 2;
    let mut sums = vec![0.0; max_r + 1];
    let mut counts = vec![0usize; max_r + 1];
    for r in 0..n {
        let u = signed_freq(r, n);
        for c in 0..n {
            let v = signed_freq(c, n);
            let radius = (u * u + v * v).sqrt().round() as usize;
            if radius >= 1 && radius <= max_r {
                sums[radius] += buf[r * n + c].norm_sqr();
                counts[radius] += 1;
            }
        }
    }
    (1..=max_r).map(|r| sums[r] / counts[r] as f64).collect()
}

/// Least-squares slope of log(power) against log(radius) over
/// `r_min..=r_max` of a spectrum from [`radial_power_spectrum`].
pub fn spectral_slope(spectrum: &[f64], r_min: usize, r_max: usize) -> f64 {
    let pts: Vec<(f64, f64)> = (r_min.max(1)..=r_max.min(spectrum.len()))
        .filter(|&r| spectrum[r - 1] > 0.0)
        .map(|r| ((r as f64).ln(), spectrum[r - 1].ln()))
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}
