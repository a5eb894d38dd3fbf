//! High-temperature decomposition of the supervised contrastive loss, the
//! loss/IMMD/HSIC bound, and correlation of term and loss trajectories.

use serde::{Deserialize, Serialize};

use crate::discrepancy::{cmmd_sq, hsic, immd_sq};
use crate::kernels::{gram, EmbeddingBatch};
use crate::losses::sup_contrastive;
use crate::{Error, Result};

/// One evaluation of the decomposition
/// `τ·L ≈ CMMD²/4 + A − B/2 + C/(2τ) + τ·log(|B| − 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecompositionRecord {
    pub tau: f64,
    /// Supervised contrastive loss at `tau`, before scaling by `tau`.
    pub loss: f64,
    pub cmmd_quarter: f64,
    pub term_a: f64,
    pub term_b: f64,
    pub term_c: f64,
    pub log_const: f64,
    pub residual: f64,
}

impl DecompositionRecord {
    /// Assembles a record, computing the residual from the other fields.
    pub fn from_terms(
        tau: f64,
        loss: f64,
        cmmd_quarter: f64,
        term_a: f64,
        term_b: f64,
        term_c: f64,
        log_const: f64,
    ) -> Self {
        let mut r = Self {
            tau,
            loss,
            cmmd_quarter,
            term_a,
            term_b,
            term_c,
            log_const,
            residual: 0.0,
        };
        r.residual = tau * loss - r.rhs();
        r
    }

    pub fn scaled_loss(&self) -> f64 {
        self.tau * self.loss
    }

    pub fn rhs(&self) -> f64 {
        self.cmmd_quarter + self.term_a - self.term_b / 2.0
            + self.term_c / (2.0 * self.tau)
            + self.log_const
    }

    /// Whether the stored residual equals `τ·loss − rhs`.
    pub fn identity_holds(&self, tol: f64) -> bool {
        (self.residual - (self.scaled_loss() - self.rhs())).abs() <= tol
    }
}

/// Checks that every (class, domain) cell of the classes present holds the
/// same number of samples.
pub fn check_balanced(batch: &EmbeddingBatch) -> Result<usize> {
    let classes = batch.classes_present();
    let size = batch.cell(classes[0], 0).len();
    for &c in &classes {
        for d in 0..2 {
            let got = batch.cell(c, d).len();
            if got != size || got == 0 {
                return Err(Error::InvalidBatch(format!(
                    "unbalanced batch: cell (class {c}, domain {d}) has {got} samples, expected {size}"
                )));
            }
        }
    }
    Ok(size)
}

/// Decomposes the supervised contrastive loss of a balanced batch.
///
/// * A: mean kernel value over all pairs `i ≠ j`.
/// * B: `Σ_c π̂(c)` of the within-cell mean kernel value (self-pairs
///   excluded) for domain 0 plus that for domain 1.
/// * C: mean over anchors of the variance of `k(x_i, x_l)` over `l ≠ i`.
pub fn decompose(batch: &EmbeddingBatch, tau: f64) -> Result<DecompositionRecord> {
    let cell_size = check_balanced(batch)?;
    if cell_size < 2 {
        return Err(Error::InvalidBatch(
            "decomposition needs at least two samples per cell".into(),
        ));
    }
    let loss = sup_contrastive(batch.z(), batch.class_labels(), tau)?.value;
    let k = gram(batch).into_inner();
    let n = batch.len();

    let mut term_a = 0.0;
    let mut term_c = 0.0;
    for i in 0..n {
        let others = (0..n).filter(|&l| l != i).map(|l| k[[i, l]]);
        let mean = others.clone().sum::<f64>() / (n - 1) as f64;
        let var = others.map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        term_a += mean;
        term_c += var;
    }
    term_a /= n as f64;
    term_c /= n as f64;

    let mut term_b = 0.0;
    for c in batch.classes_present() {
        let prior = batch.class_members(c).len() as f64 / n as f64;
        for d in 0..2 {
            let cell = batch.cell(c, d);
            let mut s = 0.0;
            for &i in &cell {
                for &j in &cell {
                    if i != j {
                        s += k[[i, j]];
                    }
                }
            }
            term_b += prior * s / (cell.len() * (cell.len() - 1)) as f64;
        }
    }

    Ok(DecompositionRecord::from_terms(
        tau,
        loss,
        cmmd_sq(batch)? / 4.0,
        term_a,
        term_b,
        term_c,
        tau * ((n - 1) as f64).ln(),
    ))
}

/// The bound constant γ for a kernel bounded by `k_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaConstant {
    pub k_max: f64,
    pub gamma: f64,
}

fn gamma_equation(gamma: f64) -> f64 {
    (1.0 + (1.0 - 4.0 * gamma).max(0.0).sqrt()) / (2.0 * gamma)
}

impl GammaConstant {
    /// `|(1 + √(1 − 4γ)) / (2γ) − max{2, 2·k_max}|`.
    pub fn back_substitution_residual(&self) -> f64 {
        (gamma_equation(self.gamma) - (2.0 * self.k_max).max(2.0)).abs()
    }
}

/// Solves `(1 + √(1 − 4γ)) / (2γ) = max{2, 2·k_max}` for `γ ∈ (0, 1/4]` by
/// bisection.
pub fn solve_gamma(k_max: f64) -> Result<GammaConstant> {
    if !(k_max > 0.0) || !k_max.is_finite() {
        return Err(Error::InvalidArgument(format!("k_max must be > 0, got {k_max}")));
    }
    let target = (2.0 * k_max).max(2.0);
    // The left side decreases from +∞ at γ → 0 to 2 at γ = 1/4.
    if gamma_equation(0.25) > target {
        return Err(Error::Degenerate(format!("no root in (0, 1/4] for target {target}")));
    }
    let (mut lo, mut hi) = (0.0f64, 0.25f64);
    while hi - lo > 1e-15 {
        let mid = 0.5 * (lo + hi);
        if gamma_equation(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(GammaConstant { k_max, gamma: hi })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lemma2Check {
    /// `−IMMD²/α̂ + γ·HSIC(X, X)`.
    pub lhs: f64,
    /// The contrastive loss value.
    pub rhs: f64,
    /// `rhs − lhs`.
    pub slack: f64,
    /// Empirical variance of `k` over pairs `i ≠ j`, the size of the
    /// neglected higher-order term.
    pub var_k: f64,
    pub satisfied_with_slack: bool,
}

/// Evaluates the bound `−IMMD²/α + γ·HSIC(X, X) ≤ L` on one batch, with γ
/// for the unit-norm linear kernel (`k_max = 1`).
pub fn lemma2_bound_check(batch: &EmbeddingBatch, tau: f64, alpha_hat: f64) -> Result<Lemma2Check> {
    if !(alpha_hat > 0.0) || !alpha_hat.is_finite() {
        return Err(Error::InvalidArgument(format!("alpha_hat must be > 0, got {alpha_hat}")));
    }
    let loss = sup_contrastive(batch.z(), batch.class_labels(), tau)?.value;
    let k = gram(batch).into_inner();
    let gamma = solve_gamma(1.0)?.gamma;
    let lhs = -immd_sq(batch)? / alpha_hat + gamma * hsic(&k, &k)?;

    let n = batch.len();
    let off: Vec<f64> = (0..n)
        .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
        .map(|(i, j)| k[[i, j]])
        .collect();
    let mean = off.iter().sum::<f64>() / off.len() as f64;
    let var_k = off.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / off.len() as f64;

    let slack = loss - lhs;
    Ok(Lemma2Check {
        lhs,
        rhs: loss,
        slack,
        var_k,
        satisfied_with_slack: slack + var_k >= 0.0,
    })
}

/// Decomposition term tracked against the loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Term {
    Cmmd,
    A,
    B,
    C,
}

impl Term {
    pub const ALL: [Term; 4] = [Term::Cmmd, Term::A, Term::B, Term::C];

    pub fn name(self) -> &'static str {
        match self {
            Term::Cmmd => "cmmd",
            Term::A => "a",
            Term::B => "b",
            Term::C => "c",
        }
    }

    pub fn of(self, r: &DecompositionRecord) -> f64 {
        match self {
            Term::Cmmd => r.cmmd_quarter * 4.0,
            Term::A => r.term_a,
            Term::B => r.term_b,
            Term::C => r.term_c,
        }
    }
}

/// Pearson correlation between the first differences of two series.
pub fn derivative_correlation(term: &[f64], loss: &[f64]) -> Result<f64> {
    if term.len() != loss.len() {
        return Err(Error::DimensionMismatch(format!(
            "series lengths differ: {} vs {}",
            term.len(),
            loss.len()
        )));
    }
    if term.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "need at least 3 steps, got {}",
            term.len()
        )));
    }
    let dt: Vec<f64> = term.windows(2).map(|w| w[1] - w[0]).collect();
    let dl: Vec<f64> = loss.windows(2).map(|w| w[1] - w[0]).collect();
    pearson(&dt, &dl)
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    if !(sxx > 0.0) || !(syy > 0.0) {
        return Err(Error::Degenerate("zero-variance difference series".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use ndarray::Array2;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    use super::*;

    /// Balanced batch: `per_cell` samples for each of `k` classes × 2 domains,
    /// class means along separate axes plus isotropic noise of scale `spread`.
    fn balanced(k: usize, per_cell: usize, m: usize, spread: f64, seed: u64) -> EmbeddingBatch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 2 * k * per_cell;
        let classes: Vec<usize> = (0..n).map(|i| i % k).collect();
        let domains: Vec<u8> = (0..n).map(|i| ((i / k) % 2) as u8).collect();
        let z = Array2::from_shape_fn((n, m), |(i, d)| {
            let centre = if d == classes[i] { 1.0 } else { 0.0 };
            centre + spread * { let v: f64 = StandardNormal.sample(&mut rng); v }
        });
        EmbeddingBatch::normalized(z, classes, domains).unwrap()
    }

    #[test]
    fn identical_embeddings_decompose_exactly() {
        let n = 12;
        let z = Array2::from_shape_fn((n, 3), |(_, d)| if d == 1 { 1.0 } else { 0.0 });
        let b = EmbeddingBatch::new(z, (0..n).map(|i| i % 3).collect(), (0..n).map(|i| ((i / 3) % 2) as u8).collect())
            .unwrap();
        for tau in [0.1, 0.5, 2.0] {
            let r = decompose(&b, tau).unwrap();
            assert!((r.term_a - 1.0).abs() < 1e-12);
            assert!((r.term_b - 2.0).abs() < 1e-12);
            assert!(r.term_c.abs() < 1e-12);
            assert!(r.cmmd_quarter.abs() < 1e-12);
            assert!((r.scaled_loss() - tau * 11f64.ln()).abs() < 1e-12);
            assert!(r.residual.abs() < 1e-12);
            assert!(r.identity_holds(1e-12));
        }
    }

    #[test]
    fn unbalanced_batch_is_rejected() {
        let b = balanced(2, 3, 4, 0.5, 0);
        let keep: Vec<usize> = (1..b.len()).collect();
        assert!(decompose(&b.select(&keep).unwrap(), 0.5).is_err());
    }

    #[test]
    fn residual_shrinks_at_high_temperature() {
        let mut wins = 0;
        for seed in 0..30 {
            let b = balanced(3, 5, 8, 0.6, seed);
            let lo = decompose(&b, 0.5).unwrap().residual.abs();
            let hi = decompose(&b, 5.0).unwrap().residual.abs();
            if hi < lo {
                wins += 1;
            }
        }
        assert_eq!(wins, 30);
    }

    #[test]
    fn mean_residual_is_monotone_over_grid() {
        let batches: Vec<EmbeddingBatch> = (0..20).map(|s| balanced(3, 4, 8, 0.6, 40 + s)).collect();
        let mut last = f64::INFINITY;
        for tau in [0.2, 0.5, 1.0, 2.0, 5.0] {
            let mean = batches
                .iter()
                .map(|b| decompose(b, tau).unwrap().residual.abs())
                .sum::<f64>()
                / batches.len() as f64;
            assert!(mean <= last, "tau {tau}: {mean} > {last}");
            last = mean;
        }
    }

    #[test]
    fn term_c_grows_with_spread() {
        // Two nearby cluster centres, so within-class spread dominates the
        // spread of kernel values.
        let mut last = -1.0;
        for level in 1..=10 {
            let spread = 0.02 * level as f64;
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            let n = 24;
            let classes: Vec<usize> = (0..n).map(|i| i % 2).collect();
            let domains: Vec<u8> = (0..n).map(|i| ((i / 2) % 2) as u8).collect();
            let z = Array2::from_shape_fn((n, 6), |(i, d)| {
                let centre = match (d, classes[i]) {
                    (0, 0) => 1.0,
                    (0, _) => 0.1f64.cos(),
                    (1, 1) => 0.1f64.sin(),
                    _ => 0.0,
                };
                let e: f64 = StandardNormal.sample(&mut rng);
                centre + spread * e
            });
            let b = EmbeddingBatch::normalized(z, classes, domains).unwrap();
            let c = decompose(&b, 0.5).unwrap().term_c;
            assert!(c > last, "level {level}");
            last = c;
        }
    }

    #[test]
    fn residual_identity_detects_corruption() {
        let b = balanced(3, 2, 5, 0.4, 3);
        let mut r = decompose(&b, 0.5).unwrap();
        assert!(r.identity_holds(1e-12));
        r.term_b = -r.term_b;
        assert!(!r.identity_holds(1e-12));
    }

    #[test]
    fn gamma_examples() {
        assert!((solve_gamma(1.0).unwrap().gamma - 0.25).abs() < 1e-12);
        assert!((solve_gamma(0.3).unwrap().gamma - 0.25).abs() < 1e-12);
        // (1 + √(1 − 4γ)) / (2γ) = t  ⇔  γ = (t − 1) / t²
        let g = solve_gamma(2.0).unwrap();
        assert!((g.gamma - 3.0 / 16.0).abs() < 1e-12);
        assert!(g.back_substitution_residual() < 1e-10);
        assert!(solve_gamma(0.0).is_err());
        assert!(solve_gamma(-1.0).is_err());
    }

    #[test]
    fn gamma_back_substitution() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let k_max = rand::Rng::random_range(&mut rng, 1.0..10.0);
            let g = solve_gamma(k_max).unwrap();
            assert!(g.gamma > 0.0 && g.gamma <= 0.25);
            assert!(g.back_substitution_residual() < 1e-10, "k_max {k_max}");
        }
    }

    #[test]
    fn bound_on_identical_embeddings() {
        let z = Array2::from_shape_fn((8, 2), |(_, d)| if d == 0 { 1.0 } else { 0.0 });
        let b = EmbeddingBatch::new(z, (0..8).map(|i| i % 2).collect(), (0..8).map(|i| ((i / 2) % 2) as u8).collect())
            .unwrap();
        let c = lemma2_bound_check(&b, 0.5, 1.0).unwrap();
        assert!(c.lhs.abs() < 1e-12);
        assert!((c.rhs - 7f64.ln()).abs() < 1e-12);
        assert!(c.satisfied_with_slack);
    }

    #[test]
    fn bound_holds_on_random_batches() {
        let calibration: Vec<f64> = (0..10)
            .map(|s| {
                let b = balanced(2, 16, 8, 0.8, 1000 + s);
                crate::discrepancy::DiscrepancyReport::compute(&b, Default::default())
                    .unwrap()
                    .alpha()
                    .unwrap()
            })
            .collect();
        let alpha = calibration.iter().sum::<f64>() / calibration.len() as f64;
        let ok = (0..100)
            .filter(|&s| lemma2_bound_check(&balanced(2, 16, 8, 0.8, s), 0.5, alpha).unwrap().satisfied_with_slack)
            .count();
        assert!(ok >= 95, "{ok}/100");
    }

    #[test]
    fn bound_slack_shrinks_for_separated_classes() {
        let z = Array2::from_shape_fn((8, 8), |(_, d)| if d == 0 { 1.0 } else { 0.0 });
        let same = EmbeddingBatch::new(z, (0..8).map(|i| i % 2).collect(), (0..8).map(|i| ((i / 2) % 2) as u8).collect())
            .unwrap();
        let sep = balanced(2, 2, 8, 0.01, 5);
        let alpha = crate::discrepancy::DiscrepancyReport::compute(&sep, Default::default())
            .unwrap()
            .alpha()
            .unwrap();
        let a = lemma2_bound_check(&same, 0.1, alpha).unwrap();
        let b = lemma2_bound_check(&sep, 0.1, alpha).unwrap();
        assert!(b.slack < a.slack);
    }

    #[test]
    fn correlation_examples() {
        let loss = [3.0, 2.5, 2.7, 1.9, 1.2, 1.3];
        assert!((derivative_correlation(&loss, &loss).unwrap() - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = loss.iter().map(|v| -v).collect();
        assert!((derivative_correlation(&neg, &loss).unwrap() + 1.0).abs() < 1e-12);
        assert!(derivative_correlation(&[1.0, 2.0, 3.0], &[1.0, 1.0, 1.0]).is_err());
        assert!(derivative_correlation(&[1.0, 2.0], &[1.0, 3.0]).is_err());
    }

    proptest! {
        #[test]
        fn gamma_non_increasing(a in 1.0f64..10.0, b in 1.0f64..10.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(solve_gamma(hi).unwrap().gamma <= solve_gamma(lo).unwrap().gamma + 1e-15);
        }

        #[test]
        fn stored_residual_is_exact(seed in 0u64..100, tau in 0.05f64..5.0) {
            let r = decompose(&balanced(2, 3, 4, 0.7, seed), tau).unwrap();
            prop_assert!(r.identity_holds(1e-12));
        }
    }
}
