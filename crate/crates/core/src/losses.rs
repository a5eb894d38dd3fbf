//! Contrastive and cross-entropy losses with analytic gradients.
//!
//! Contrastive losses take raw embedding matrices rather than validated
//! [`EmbeddingBatch`](crate::kernels::EmbeddingBatch)es: gradients are taken
//! with respect to the rows as free variables, and composing with the
//! unit-norm projection is left to the caller.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::kernels::inner_products;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositivePairing {
    /// Each sample has exactly one positive, its augmented counterpart.
    AugmentationPairs,
    /// Every other sample with the same label is a positive.
    SameLabel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContrastiveConfig {
    pub temperature: f64,
    pub positive_pairing: PositivePairing,
}

impl ContrastiveConfig {
    pub fn validate(&self) -> Result<()> {
        check_temperature(self.temperature)
    }
}

/// How positives are defined for one batch.
#[derive(Debug, Clone, Copy)]
pub enum Positives<'a> {
    /// `pairs[i]` is the positive counterpart of sample `i`.
    Pairs(&'a [usize]),
    /// Same-label samples are positives.
    Labels(&'a [usize]),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossResult {
    pub value: f64,
    /// Gradient with respect to the input matrix (embeddings or logits).
    pub grad_z: Array2<f64>,
}

fn check_temperature(tau: f64) -> Result<()> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "temperature must be positive, got {tau}"
        )));
    }
    Ok(())
}

/// Row-stochastic positive weights `W[i][j]`, zero on the diagonal.
fn positive_weights(n: usize, positives: Positives<'_>) -> Result<Array2<f64>> {
    let mut w = Array2::zeros((n, n));
    match positives {
        Positives::Pairs(pairs) => {
            if pairs.len() != n {
                return Err(Error::InvalidBatch(format!(
                    "pairing has {} entries for {n} samples",
                    pairs.len()
                )));
            }
            if !n.is_multiple_of(2) {
                return Err(Error::InvalidBatch(format!("pairing needs an even batch, got {n}")));
            }
            for (i, &j) in pairs.iter().enumerate() {
                if j >= n || j == i || pairs[j] != i {
                    return Err(Error::InvalidBatch(format!(
                        "pairing is not a fixed-point-free involution at {i} -> {j}"
                    )));
                }
                w[[i, j]] = 1.0;
            }
        }
        Positives::Labels(labels) => {
            if labels.len() != n {
                return Err(Error::InvalidBatch(format!(
                    "{} labels for {n} samples",
                    labels.len()
                )));
            }
            for i in 0..n {
                let count = labels.iter().filter(|&&y| y == labels[i]).count() - 1;
                if count == 0 {
                    return Err(Error::InvalidBatch(format!(
                        "sample {i} is the only member of class {} in the batch",
                        labels[i]
                    )));
                }
                let weight = 1.0 / count as f64;
                for j in 0..n {
                    if j != i && labels[j] == labels[i] {
                        w[[i, j]] = weight;
                    }
                }
            }
        }
    }
    Ok(w)
}

/// `(1/n) Σ_i [ log Σ_{l≠i} e^{s_il} - Σ_j W_ij s_ij ]` with `s = zzᵀ/τ`.
fn contrastive(z: ArrayView2<'_, f64>, tau: f64, positives: Positives<'_>) -> Result<LossResult> {
    check_temperature(tau)?;
    let n = z.nrows();
    if n < 2 {
        return Err(Error::InvalidBatch(format!("contrastive loss needs n >= 2, got {n}")));
    }
    let w = positive_weights(n, positives)?;
    let s = inner_products(z) / tau;

    let mut value = 0.0;
    // D = softmax_{l≠i}(s_i·) - W
    let mut d = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        let row = s.row(i);
        let max = (0..n)
            .filter(|&l| l != i)
            .map(|l| row[l])
            .fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for l in 0..n {
            if l != i {
                let e = (row[l] - max).exp();
                d[[i, l]] = e;
                denom += e;
            }
        }
        let lse = max + denom.ln();
        let mut pos = 0.0;
        for l in 0..n {
            if l != i {
                d[[i, l]] = d[[i, l]] / denom - w[[i, l]];
                pos += w[[i, l]] * row[l];
            }
        }
        value += lse - pos;
    }
    value /= n as f64;

    let sym = &d + &d.t();
    let grad = sym.dot(&z) / (n as f64 * tau);
    Ok(LossResult { value, grad_z: grad })
}

/// NT-Xent over a batch whose positives are given by a pairing.
pub fn nt_xent(z: ArrayView2<'_, f64>, pairs: &[usize], tau: f64) -> Result<LossResult> {
    contrastive(z, tau, Positives::Pairs(pairs))
}

/// Supervised contrastive loss: positives are all other same-label samples.
pub fn sup_contrastive(z: ArrayView2<'_, f64>, labels: &[usize], tau: f64) -> Result<LossResult> {
    contrastive(z, tau, Positives::Labels(labels))
}

/// Dispatches on the positive definition.
pub fn contrastive_loss(
    z: ArrayView2<'_, f64>,
    positives: Positives<'_>,
    tau: f64,
) -> Result<LossResult> {
    contrastive(z, tau, positives)
}

/// Mean softmax cross-entropy; the gradient is with respect to the logits.
pub fn cross_entropy(logits: ArrayView2<'_, f64>, labels: &[usize]) -> Result<LossResult> {
    let (n, k) = logits.dim();
    if labels.len() != n || n == 0 {
        return Err(Error::InvalidBatch(format!(
            "{} labels for {n} logit rows",
            labels.len()
        )));
    }
    if let Some(&y) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::InvalidBatch(format!("label {y} out of range for {k} classes")));
    }
    let mut grad = Array2::zeros((n, k));
    let mut value = 0.0;
    for (i, row) in logits.rows().into_iter().enumerate() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = row.iter().map(|&v| (v - max).exp()).sum();
        let lse = max + denom.ln();
        value += lse - row[labels[i]];
        for c in 0..k {
            let p = (row[c] - lse).exp();
            grad[[i, c]] = (p - if c == labels[i] { 1.0 } else { 0.0 }) / n as f64;
        }
    }
    Ok(LossResult {
        value: value / n as f64,
        grad_z: grad,
    })
}

/// Both sides of the rewriting of a contrastive loss as
/// `E_X[log E_X'[e^{k/τ}]] - (1/τ) E_pos[k] + log(|B| - 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpectationForm {
    /// The loss as computed by [`contrastive_loss`].
    pub lhs: f64,
    /// The expectation form evaluated with empirical means over `X' ≠ X`
    /// and positive pairs pooled over the batch.
    pub rhs: f64,
}

impl ExpectationForm {
    pub fn gap(&self) -> f64 {
        (self.lhs - self.rhs).abs()
    }
}

pub fn empirical_expectation_form(
    z: ArrayView2<'_, f64>,
    positives: Positives<'_>,
    tau: f64,
) -> Result<ExpectationForm> {
    let lhs = contrastive(z, tau, positives)?.value;
    let n = z.nrows();
    let k = inner_products(z);

    let mut log_mean_exp = 0.0;
    for i in 0..n {
        let max = (0..n)
            .filter(|&l| l != i)
            .map(|l| k[[i, l]] / tau)
            .fold(f64::NEG_INFINITY, f64::max);
        let mean = (0..n)
            .filter(|&l| l != i)
            .map(|l| (k[[i, l]] / tau - max).exp())
            .sum::<f64>()
            / (n - 1) as f64;
        log_mean_exp += max + mean.ln();
    }
    log_mean_exp /= n as f64;

    let (mut pos_sum, mut pos_count) = (0.0, 0usize);
    for i in 0..n {
        for j in 0..n {
            let is_pos = match positives {
                Positives::Pairs(p) => p[i] == j,
                Positives::Labels(y) => j != i && y[j] == y[i],
            };
            if is_pos {
                pos_sum += k[[i, j]];
                pos_count += 1;
            }
        }
    }
    let e_pos = pos_sum / pos_count as f64;
    let rhs = log_mean_exp - e_pos / tau + ((n - 1) as f64).ln();
    Ok(ExpectationForm { lhs, rhs })
}
