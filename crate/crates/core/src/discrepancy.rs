//! Plug-in estimators of class-conditional and inter-class discrepancies
//! between domain-tagged embedding batches.

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::kernels::{gram, label_gram, EmbeddingBatch, LabelKernel};
use crate::{Error, Result};

/// How class priors enter the class-wise estimators.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassWeighting {
    /// π̂(c) = n_c / n.
    #[default]
    Empirical,
    /// π(c) = 1 / (number of classes present).
    Uniform,
}

fn mean_of(batch: &EmbeddingBatch, idx: &[usize]) -> Array1<f64> {
    let mut m = Array1::zeros(batch.dim());
    for &i in idx {
        m += &batch.z().row(i);
    }
    m / idx.len() as f64
}

fn sq_dist(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Priors over the classes present, as `(class, weight)` pairs.
pub fn class_priors(batch: &EmbeddingBatch, weighting: ClassWeighting) -> Vec<(usize, f64)> {
    let present = batch.classes_present();
    let k = present.len() as f64;
    let n = batch.len() as f64;
    present
        .into_iter()
        .map(|c| {
            let w = match weighting {
                ClassWeighting::Empirical => batch.class_members(c).len() as f64 / n,
                ClassWeighting::Uniform => 1.0 / k,
            };
            (c, w)
        })
        .collect()
}

/// Mean embedding of every (class, domain) cell, indexed `[class][domain]`.
fn cell_means(batch: &EmbeddingBatch, classes: &[usize]) -> Result<Vec<[Array1<f64>; 2]>> {
    classes
        .iter()
        .map(|&c| {
            let d0 = batch.cell(c, 0);
            let d1 = batch.cell(c, 1);
            if d0.is_empty() || d1.is_empty() {
                let missing = if d0.is_empty() { 0 } else { 1 };
                return Err(Error::EstimatorUndefined(format!(
                    "class {c} has no samples in domain {missing}"
                )));
            }
            Ok([mean_of(batch, &d0), mean_of(batch, &d1)])
        })
        .collect()
}

/// `Σ_c π(c) ‖μ_{c,0} − μ_{c,1}‖²`.
pub fn cmmd_sq_weighted(batch: &EmbeddingBatch, weighting: ClassWeighting) -> Result<f64> {
    let priors = class_priors(batch, weighting);
    let classes: Vec<usize> = priors.iter().map(|p| p.0).collect();
    let means = cell_means(batch, &classes)?;
    Ok(priors
        .iter()
        .zip(&means)
        .map(|(&(_, w), m)| w * sq_dist(m[0].view(), m[1].view()))
        .sum())
}

/// Class-wise MMD² with empirical class priors.
pub fn cmmd_sq(batch: &EmbeddingBatch) -> Result<f64> {
    cmmd_sq_weighted(batch, ClassWeighting::Empirical)
}

/// Average over ordered class pairs `c1 ≠ c2`, weighted
/// `π(c1)π(c2) / (1 − Σπ²)`, and uniformly over the four domain
/// combinations, of `‖μ_{c1,D2} − μ_{c2,D1}‖²`.
pub fn dcmmd_sq_weighted(batch: &EmbeddingBatch, weighting: ClassWeighting) -> Result<f64> {
    let priors = class_priors(batch, weighting);
    if priors.len() < 2 {
        return Err(Error::EstimatorUndefined(
            "DCMMD needs at least two classes".into(),
        ));
    }
    let classes: Vec<usize> = priors.iter().map(|p| p.0).collect();
    let means = cell_means(batch, &classes)?;
    let norm = 1.0 - priors.iter().map(|p| p.1 * p.1).sum::<f64>();
    let mut total = 0.0;
    for (a, &(_, wa)) in priors.iter().enumerate() {
        for (b, &(_, wb)) in priors.iter().enumerate() {
            if a == b {
                continue;
            }
            let mut combos = 0.0;
            for d1 in 0..2 {
                for d2 in 0..2 {
                    combos += sq_dist(means[a][d2].view(), means[b][d1].view());
                }
            }
            total += wa * wb / norm * combos / 4.0;
        }
    }
    Ok(total)
}

pub fn dcmmd_sq(batch: &EmbeddingBatch) -> Result<f64> {
    dcmmd_sq_weighted(batch, ClassWeighting::Empirical)
}

/// `Σ_{c1,c2} π(c1)π(c2) ‖m_{c1} − m_{c2}‖²` over ordered pairs including the
/// diagonal, where `m_c` pools both domains.
pub fn immd_sq(batch: &EmbeddingBatch) -> Result<f64> {
    let priors = class_priors(batch, ClassWeighting::Empirical);
    let means: Vec<Array1<f64>> = priors
        .iter()
        .map(|&(c, _)| mean_of(batch, &batch.class_members(c)))
        .collect();
    let mut total = 0.0;
    for (a, &(_, wa)) in priors.iter().enumerate() {
        for (b, &(_, wb)) in priors.iter().enumerate() {
            total += wa * wb * sq_dist(means[a].view(), means[b].view());
        }
    }
    Ok(total)
}

/// Biased HSIC estimator `trace(K H L H) / (n − 1)²`, `H = I − 11ᵀ/n`.
pub fn hsic(k: &Array2<f64>, l: &Array2<f64>) -> Result<f64> {
    let n = k.nrows();
    if k.ncols() != n || l.dim() != (n, n) {
        return Err(Error::DimensionMismatch(format!(
            "HSIC needs two square matrices of equal size, got {:?} and {:?}",
            k.dim(),
            l.dim()
        )));
    }
    if n < 2 {
        return Err(Error::DimensionMismatch(format!("HSIC needs n >= 2, got {n}")));
    }
    let kc = center(k);
    let lc = center(l);
    // trace(HKH · HLH) = trace(KHLH) since H is idempotent.
    let t: f64 = kc.iter().zip(lc.t().iter()).map(|(a, b)| a * b).sum();
    Ok(t / ((n - 1) * (n - 1)) as f64)
}

fn center(m: &Array2<f64>) -> Array2<f64> {
    let n = m.nrows() as f64;
    let row_means: Vec<f64> = m.rows().into_iter().map(|r| r.sum() / n).collect();
    let col_means: Vec<f64> = m.columns().into_iter().map(|c| c.sum() / n).collect();
    let grand = row_means.iter().sum::<f64>() / n;
    Array2::from_shape_fn(m.dim(), |(i, j)| m[[i, j]] - row_means[i] - col_means[j] + grand)
}

/// Both sides of the mixture decomposition of a pair expectation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixtureCheck {
    /// Mean of `g` over all ordered pooled pairs.
    pub lhs: f64,
    /// `p²·E_{11} + 2p(1−p)·E_{10} + (1−p)²·E_{00}` with `p = n₁/n`.
    pub rhs: f64,
    pub p: f64,
}

/// Evaluates a symmetric pair statistic `g` under the domain mixture, both
/// directly and through the within/between-domain decomposition. Means are
/// over all ordered pairs, self-pairs included, which makes the two sides
/// agree exactly.
pub fn mixture_expectation_check<G>(batch: &EmbeddingBatch, g: G) -> MixtureCheck
where
    G: Fn(ArrayView1<'_, f64>, ArrayView1<'_, f64>) -> f64,
{
    let n = batch.len();
    let z = batch.z();
    let domains = batch.domain_labels();
    let mut sums = [[0.0; 2]; 2];
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            let v = g(z.row(i), z.row(j));
            total += v;
            sums[domains[i] as usize][domains[j] as usize] += v;
        }
    }
    let n1 = domains.iter().filter(|&&d| d == 1).count();
    let n0 = n - n1;
    let p = n1 as f64 / n as f64;
    let mean = |a: usize, b: usize, na: usize, nb: usize| {
        if na == 0 || nb == 0 {
            0.0
        } else {
            sums[a][b] / (na * nb) as f64
        }
    };
    let cross = (mean(1, 0, n1, n0) + mean(0, 1, n0, n1)) / 2.0;
    let rhs = p * p * mean(1, 1, n1, n1)
        + 2.0 * p * (1.0 - p) * cross
        + (1.0 - p) * (1.0 - p) * mean(0, 0, n0, n0);
    MixtureCheck {
        lhs: total / (n * n) as f64,
        rhs,
        p,
    }
}

/// All estimators on one batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscrepancyReport {
    pub cmmd_sq: f64,
    pub dcmmd_sq: f64,
    pub immd_sq: f64,
    /// HSIC between embeddings and the supervised label kernel (Δl = K).
    pub hsic_xy: f64,
    pub hsic_xx: f64,
    pub class_priors: Vec<(usize, f64)>,
    pub mixture_p: f64,
}

impl DiscrepancyReport {
    pub fn compute(batch: &EmbeddingBatch, weighting: ClassWeighting) -> Result<Self> {
        let k = gram(batch).into_inner();
        let n_classes = batch.classes_present().len();
        let l = label_gram(batch.class_labels(), LabelKernel::supervised(n_classes));
        Ok(Self {
            cmmd_sq: cmmd_sq_weighted(batch, weighting)?,
            dcmmd_sq: dcmmd_sq_weighted(batch, weighting)?,
            immd_sq: immd_sq(batch)?,
            hsic_xy: hsic(&k, &l)?,
            hsic_xx: hsic(&k, &k)?,
            class_priors: class_priors(batch, weighting),
            mixture_p: 0.5,
        })
    }

    /// Empirical α = IMMD² / HSIC(X, Y).
    pub fn alpha(&self) -> Result<f64> {
        if !(self.hsic_xy.abs() > 0.0) {
            return Err(Error::Degenerate("HSIC(X, Y) is zero; α undefined".into()));
        }
        Ok(self.immd_sq / self.hsic_xy)
    }
}
