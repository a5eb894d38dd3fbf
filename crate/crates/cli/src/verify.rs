//! Property suite behind `ctda verify`.
//!
//! Each check compares a library routine with a direct evaluation of its
//! definition, or measures a statistical property over seeded random
//! batches, and reports the tolerance next to the measured value.

use ctda_core::discrepancy::{cmmd_sq, dcmmd_sq, hsic, immd_sq, DiscrepancyReport};
use ctda_core::kernels::EmbeddingBatch;
use ctda_core::losses::{cross_entropy, nt_xent, sup_contrastive};
use ctda_core::synthgen::{radial_power_spectrum, sample_texture, spectral_slope, GeneratorConfig};
use ctda_core::theory::{decompose, lemma2_bound_check, solve_gamma, DecompositionRecord};
use ctda_core::trainer::{FeatureMap, LinearHead};
use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::config::VerifyConfig;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    /// What `measured` is compared against.
    pub tolerance: f64,
    pub measured: f64,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn at_most(name: &str, tolerance: f64, measured: f64, detail: String) -> Self {
        Self {
            name: name.into(),
            tolerance,
            measured,
            passed: measured <= tolerance,
            detail,
        }
    }

    fn at_least(name: &str, tolerance: f64, measured: f64, detail: String) -> Self {
        Self {
            name: name.into(),
            tolerance,
            measured,
            passed: measured >= tolerance,
            detail,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationReport {
    pub schema: u32,
    pub passed: bool,
    pub checks: Vec<Check>,
}

impl VerificationReport {
    pub fn failures(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }
}

fn randn<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| {
        let v: f64 = StandardNormal.sample(rng);
        v
    })
}

fn unit_rows(mut z: Array2<f64>) -> Array2<f64> {
    for mut row in z.rows_mut() {
        let n = row.dot(&row).sqrt();
        row /= n;
    }
    z
}

/// Balanced batch: classes along separate axes plus isotropic noise.
pub fn balanced_batch(k: usize, per_cell: usize, m: usize, spread: f64, seed: u64) -> EmbeddingBatch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 2 * k * per_cell;
    let classes: Vec<usize> = (0..n).map(|i| i % k).collect();
    let domains: Vec<u8> = (0..n).map(|i| ((i / k) % 2) as u8).collect();
    let z = Array2::from_shape_fn((n, m), |(i, d)| {
        let v: f64 = StandardNormal.sample(&mut rng);
        if d == classes[i] { 1.0 + spread * v } else { spread * v }
    });
    EmbeddingBatch::normalized(z, classes, domains).expect("nonzero rows")
}

fn dot(z: ArrayView2<'_, f64>, i: usize, j: usize) -> f64 {
    z.row(i).dot(&z.row(j))
}

/// Supervised contrastive loss straight from its definition.
pub fn sup_contrastive_oracle(z: ArrayView2<'_, f64>, labels: &[usize], tau: f64) -> f64 {
    let n = z.nrows();
    let mut total = 0.0;
    for i in 0..n {
        let denom: f64 = (0..n).filter(|&l| l != i).map(|l| (dot(z, i, l) / tau).exp()).sum();
        let pos: Vec<usize> = (0..n).filter(|&p| p != i && labels[p] == labels[i]).collect();
        let s: f64 = pos.iter().map(|&p| ((dot(z, i, p) / tau).exp() / denom).ln()).sum();
        total += -s / pos.len() as f64;
    }
    total / n as f64
}

pub fn nt_xent_oracle(z: ArrayView2<'_, f64>, pairs: &[usize], tau: f64) -> f64 {
    let n = z.nrows();
    let mut total = 0.0;
    for i in 0..n {
        let denom: f64 = (0..n).filter(|&l| l != i).map(|l| (dot(z, i, l) / tau).exp()).sum();
        total += -((dot(z, i, pairs[i]) / tau).exp() / denom).ln();
    }
    total / n as f64
}

pub fn cross_entropy_oracle(logits: ArrayView2<'_, f64>, labels: &[usize]) -> f64 {
    let mut total = 0.0;
    for (row, &y) in logits.rows().into_iter().zip(labels) {
        let denom: f64 = row.iter().map(|v| v.exp()).sum();
        total += -(row[y].exp() / denom).ln();
    }
    total / labels.len() as f64
}

/// Mean kernel value over all ordered pairs of two index sets, self-pairs
/// included.
fn mean_k(z: ArrayView2<'_, f64>, a: &[usize], b: &[usize]) -> f64 {
    let mut s = 0.0;
    for &i in a {
        for &j in b {
            s += dot(z, i, j);
        }
    }
    s / (a.len() * b.len()) as f64
}

/// Squared MMD between two index sets in kernel form.
fn mmd_kernel_form(z: ArrayView2<'_, f64>, a: &[usize], b: &[usize]) -> f64 {
    mean_k(z, a, a) + mean_k(z, b, b) - 2.0 * mean_k(z, a, b)
}

fn members(batch: &EmbeddingBatch, pred: impl Fn(usize, u8) -> bool) -> Vec<usize> {
    (0..batch.len())
        .filter(|&i| pred(batch.class_labels()[i], batch.domain_labels()[i]))
        .collect()
}

pub fn cmmd_oracle(batch: &EmbeddingBatch) -> f64 {
    let n = batch.len() as f64;
    let k = batch.class_labels().iter().max().map_or(0, |m| m + 1);
    (0..k)
        .map(|c| {
            let a = members(batch, |y, d| y == c && d == 0);
            let b = members(batch, |y, d| y == c && d == 1);
            let pi = (a.len() + b.len()) as f64 / n;
            pi * mmd_kernel_form(batch.z(), &a, &b)
        })
        .sum()
}

pub fn dcmmd_oracle(batch: &EmbeddingBatch) -> f64 {
    let n = batch.len() as f64;
    let k = batch.class_labels().iter().max().map_or(0, |m| m + 1);
    let pi: Vec<f64> = (0..k).map(|c| members(batch, |y, _| y == c).len() as f64 / n).collect();
    let norm = 1.0 - pi.iter().map(|p| p * p).sum::<f64>();
    let mut total = 0.0;
    for c1 in 0..k {
        for c2 in 0..k {
            if c1 == c2 {
                continue;
            }
            for d1 in 0..2u8 {
                for d2 in 0..2u8 {
                    let a = members(batch, |y, d| y == c1 && d == d2);
                    let b = members(batch, |y, d| y == c2 && d == d1);
                    total += pi[c1] * pi[c2] / norm * mmd_kernel_form(batch.z(), &a, &b) / 4.0;
                }
            }
        }
    }
    total
}

pub fn immd_oracle(batch: &EmbeddingBatch) -> f64 {
    let n = batch.len() as f64;
    let k = batch.class_labels().iter().max().map_or(0, |m| m + 1);
    let sets: Vec<Vec<usize>> = (0..k).map(|c| members(batch, |y, _| y == c)).collect();
    let mut total = 0.0;
    for a in &sets {
        for b in &sets {
            total += a.len() as f64 / n * b.len() as f64 / n * mmd_kernel_form(batch.z(), a, b);
        }
    }
    total
}

/// `trace(K H L H) / (n − 1)²` with explicit centering matrices.
pub fn hsic_oracle(k: &Array2<f64>, l: &Array2<f64>) -> f64 {
    let n = k.nrows();
    let h = Array2::from_shape_fn((n, n), |(i, j)| if i == j { 1.0 } else { 0.0 } - 1.0 / n as f64);
    let m = k.dot(&h).dot(l).dot(&h);
    m.diag().sum() / ((n - 1) * (n - 1)) as f64
}

/// `|τ·L − (CMMD²/4 + A − B/2 + C/(2τ) + τ·log(n−1)) − residual|`, with every
/// term read from the record.
pub fn residual_identity_error(r: &DecompositionRecord) -> f64 {
    let rhs = r.cmmd_quarter + r.term_a - r.term_b / 2.0 + r.term_c / (2.0 * r.tau) + r.log_const;
    (r.tau * r.loss - rhs - r.residual).abs()
}

fn rel_err(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let d = (a - b).mapv(|v| v * v).sum().sqrt();
    let s = a.mapv(|v| v * v).sum().sqrt().max(b.mapv(|v| v * v).sum().sqrt());
    if s == 0.0 { d } else { d / s }
}

fn central_difference(x: &Array2<f64>, h: f64, f: &dyn Fn(&Array2<f64>) -> f64) -> Array2<f64> {
    let mut g = Array2::zeros(x.dim());
    let mut p = x.clone();
    for idx in 0..x.len() {
        let (r, c) = (idx / x.ncols(), idx % x.ncols());
        let orig = p[[r, c]];
        p[[r, c]] = orig + h;
        let up = f(&p);
        p[[r, c]] = orig - h;
        let down = f(&p);
        p[[r, c]] = orig;
        g[[r, c]] = (up - down) / (2.0 * h);
    }
    g
}

fn random_loss_instance(rng: &mut ChaCha8Rng) -> (Array2<f64>, Vec<usize>, Vec<usize>, f64) {
    let k = rng.random_range(2..5);
    let n = 2 * k * rng.random_range(1..4);
    let m = rng.random_range(2..12);
    let z = unit_rows(randn(n, m, rng));
    let labels: Vec<usize> = (0..n).map(|i| i % k).collect();
    let pairs: Vec<usize> = (0..n).map(|i| i ^ 1).collect();
    let tau = rng.random_range(0.1..2.0);
    (z, labels, pairs, tau)
}

fn check_loss_oracles(trials: usize, rng: &mut ChaCha8Rng) -> Check {
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let (z, labels, pairs, tau) = random_loss_instance(rng);
        let a = sup_contrastive(z.view(), &labels, tau).map(|r| r.value).unwrap_or(f64::NAN);
        let b = nt_xent(z.view(), &pairs, tau).map(|r| r.value).unwrap_or(f64::NAN);
        let logits = randn(z.nrows(), 4, rng);
        let c = cross_entropy(logits.view(), &labels).map(|r| r.value).unwrap_or(f64::NAN);
        for d in [
            a - sup_contrastive_oracle(z.view(), &labels, tau),
            b - nt_xent_oracle(z.view(), &pairs, tau),
            c - cross_entropy_oracle(logits.view(), &labels),
        ] {
            worst = worst.max(if d.is_nan() { f64::INFINITY } else { d.abs() });
        }
    }
    Check::at_most(
        "loss_oracles",
        1e-12,
        worst,
        format!("max |library − definition| over {trials} batches, three losses"),
    )
}

fn check_loss_gradients(trials: usize, rng: &mut ChaCha8Rng) -> Check {
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let (z, labels, pairs, tau) = random_loss_instance(rng);
        let sc = sup_contrastive(z.view(), &labels, tau).expect("valid batch").grad_z;
        let fd = central_difference(&z, 1e-6, &|p| sup_contrastive(p.view(), &labels, tau).unwrap().value);
        worst = worst.max(rel_err(&sc, &fd));
        let nx = nt_xent(z.view(), &pairs, tau).expect("valid batch").grad_z;
        let fd = central_difference(&z, 1e-6, &|p| nt_xent(p.view(), &pairs, tau).unwrap().value);
        worst = worst.max(rel_err(&nx, &fd));
        let logits = randn(z.nrows(), 4, rng);
        let ce = cross_entropy(logits.view(), &labels).expect("valid logits").grad_z;
        let fd = central_difference(&logits, 1e-6, &|p| cross_entropy(p.view(), &labels).unwrap().value);
        worst = worst.max(rel_err(&ce, &fd));
    }
    Check::at_most(
        "loss_gradients",
        1e-4,
        worst,
        format!("max relative error against central differences (h = 1e-6) over {trials} instances"),
    )
}

fn params_of(phi: &FeatureMap) -> [Array2<f64>; 4] {
    [
        phi.w1.clone(),
        phi.b1.clone().insert_axis(ndarray::Axis(0)),
        phi.w2.clone(),
        phi.b2.clone().insert_axis(ndarray::Axis(0)),
    ]
}

fn with_param(phi: &FeatureMap, which: usize, p: &Array2<f64>) -> FeatureMap {
    let mut q = phi.clone();
    match which {
        0 => q.w1 = p.clone(),
        1 => q.b1 = p.row(0).to_owned(),
        2 => q.w2 = p.clone(),
        _ => q.b2 = p.row(0).to_owned(),
    }
    q
}

fn check_end_to_end_gradients(trials: usize, rng: &mut ChaCha8Rng) -> Check {
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let phi = FeatureMap::new(5, 7, 4, rng);
        let head = LinearHead::new(4, 3, rng);
        let x = randn(12, 5, rng);
        let y: Vec<usize> = (0..12).map(|i| i % 3).collect();
        let tau = rng.random_range(0.2..1.0);
        let cache = phi.forward_cached(x.view()).expect("dims match");

        let con = phi.backward(&cache, &sup_contrastive(cache.z.view(), &y, tau).unwrap().grad_z);
        let logits = head.logits(cache.z.view());
        let hg = head.backward(cache.z.view(), &cross_entropy(logits.view(), &y).unwrap().grad_z);
        let ce = phi.backward(&cache, &hg.input);
        let analytic = |g: &ctda_core::trainer::model::FeatureMapGrads| -> [Array2<f64>; 4] {
            [
                g.w1.clone(),
                g.b1.clone().insert_axis(ndarray::Axis(0)),
                g.w2.clone(),
                g.b2.clone().insert_axis(ndarray::Axis(0)),
            ]
        };
        let (con, ce) = (analytic(&con), analytic(&ce));
        for (which, p) in params_of(&phi).iter().enumerate() {
            let fd = central_difference(p, 1e-5, &|q| {
                let z = with_param(&phi, which, q).embed(x.view()).unwrap();
                sup_contrastive(z.view(), &y, tau).unwrap().value
            });
            worst = worst.max(rel_err(&con[which], &fd));
            let fd = central_difference(p, 1e-5, &|q| {
                let z = with_param(&phi, which, q).embed(x.view()).unwrap();
                cross_entropy(head.logits(z.view()).view(), &y).unwrap().value
            });
            worst = worst.max(rel_err(&ce[which], &fd));
        }
        let fd = central_difference(&head.weight, 1e-5, &|w| {
            let h = LinearHead {
                weight: w.clone(),
                bias: head.bias.clone(),
            };
            cross_entropy(h.logits(cache.z.view()).view(), &y).unwrap().value
        });
        worst = worst.max(rel_err(&hg.weight, &fd));
    }
    Check::at_most(
        "end_to_end_gradients",
        1e-3,
        worst,
        format!("max relative error over every parameter matrix, {trials} networks on 12-sample batches"),
    )
}

fn random_domain_batch(rng: &mut ChaCha8Rng) -> EmbeddingBatch {
    let k = rng.random_range(2..5);
    let m = rng.random_range(2..10);
    let mut classes = Vec::new();
    let mut domains = Vec::new();
    for c in 0..k {
        for d in 0..2u8 {
            for _ in 0..rng.random_range(1..6) {
                classes.push(c);
                domains.push(d);
            }
        }
    }
    let z = randn(classes.len(), m, rng);
    EmbeddingBatch::normalized(z, classes, domains).expect("nonzero rows")
}

fn check_estimators(trials: usize, rng: &mut ChaCha8Rng) -> Check {
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let b = random_domain_batch(rng);
        let z = b.z().to_owned();
        let kmat = z.dot(&z.t());
        let k = b.class_labels().iter().max().unwrap() + 1;
        let onehot = Array2::from_shape_fn((b.len(), k), |(i, c)| if b.class_labels()[i] == c { 1.0 } else { 0.0 });
        let lmat = onehot.dot(&onehot.t());
        for d in [
            cmmd_sq(&b).unwrap_or(f64::NAN) - cmmd_oracle(&b),
            dcmmd_sq(&b).unwrap_or(f64::NAN) - dcmmd_oracle(&b),
            immd_sq(&b).unwrap_or(f64::NAN) - immd_oracle(&b),
            hsic(&kmat, &lmat).unwrap_or(f64::NAN) - hsic_oracle(&kmat, &lmat),
        ] {
            worst = worst.max(if d.is_nan() { f64::INFINITY } else { d.abs() });
        }
    }
    Check::at_most(
        "estimator_oracles",
        1e-10,
        worst,
        format!("max |estimator − kernel-form oracle| for CMMD, DCMMD, IMMD, HSIC over {trials} batches"),
    )
}

fn check_residual_identity(trials: usize, rng: &mut ChaCha8Rng) -> Check {
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let b = balanced_batch(rng.random_range(2..4), rng.random_range(2..6), 6, rng.random_range(0.1..1.0), rng.random());
        let tau = rng.random_range(0.05..5.0);
        let r = decompose(&b, tau).expect("balanced batch");
        worst = worst.max(residual_identity_error(&r));
    }
    Check::at_most(
        "residual_identity",
        1e-12,
        worst,
        format!("max |τ·L − rhs − residual| over {trials} decompositions"),
    )
}

/// Training-shaped batches: 3 classes × 2 domains × 5, dimension 8.
const SHRINK_BATCHES: usize = 30;

fn mean_abs_residual(batches: &[EmbeddingBatch], tau: f64) -> f64 {
    batches
        .iter()
        .map(|b| decompose(b, tau).expect("balanced").residual.abs())
        .sum::<f64>()
        / batches.len() as f64
}

fn check_residual_shrinkage(seed: u64) -> Check {
    let batches: Vec<EmbeddingBatch> = (0..SHRINK_BATCHES as u64)
        .map(|s| balanced_batch(3, 5, 8, 0.6, seed.wrapping_add(s)))
        .collect();
    let grid = [0.2, 0.5, 1.0, 2.0, 5.0];
    let means: Vec<f64> = grid.iter().map(|&t| mean_abs_residual(&batches, t)).collect();
    let increases = means.windows(2).filter(|w| w[1] > w[0]).count();
    let wins = batches
        .iter()
        .filter(|b| decompose(b, 5.0).unwrap().residual.abs() < decompose(b, 0.5).unwrap().residual.abs())
        .count();
    Check::at_most(
        "residual_shrinkage",
        0.0,
        increases as f64,
        format!(
            "increases of mean |residual| along τ = {grid:?}: {means:?}; \
             {wins} of {SHRINK_BATCHES} batches shrink from τ = 0.5 to 5"
        ),
    )
}

fn check_bound(trials: usize, seed: u64) -> Check {
    let alpha = (0..10u64)
        .map(|s| {
            let b = balanced_batch(2, 16, 8, 0.8, seed.wrapping_add(1_000_000 + s));
            DiscrepancyReport::compute(&b, Default::default()).unwrap().alpha().unwrap()
        })
        .sum::<f64>()
        / 10.0;
    let ok = (0..trials as u64)
        .filter(|&s| {
            lemma2_bound_check(&balanced_batch(2, 16, 8, 0.8, seed.wrapping_add(s)), 0.5, alpha)
                .map(|c| c.satisfied_with_slack)
                .unwrap_or(false)
        })
        .count();
    let required = (0.95 * trials as f64).ceil();
    Check::at_least(
        "immd_bound",
        required,
        ok as f64,
        format!("batches (n = 64, τ = 0.5, α̂ = {alpha:.4}) satisfying the bound with Var[k] slack, of {trials}"),
    )
}

fn check_gamma(rng: &mut ChaCha8Rng) -> Check {
    let mut worst = (solve_gamma(1.0).map(|g| g.gamma).unwrap_or(f64::NAN) - 0.25).abs();
    let mut last = f64::INFINITY;
    let mut ks: Vec<f64> = (0..20).map(|_| rng.random_range(1.0..10.0)).collect();
    ks.sort_by(f64::total_cmp);
    for k in ks {
        match solve_gamma(k) {
            Ok(g) => {
                worst = worst.max(g.back_substitution_residual());
                if g.gamma > last {
                    worst = f64::INFINITY;
                }
                last = g.gamma;
            }
            Err(_) => worst = f64::INFINITY,
        }
    }
    Check::at_most(
        "gamma_solver",
        1e-10,
        worst,
        "max back-substitution residual over 20 k_max ∈ [1, 10]; γ non-increasing; γ(1) = 1/4".into(),
    )
}

/// Mean fitted log-log slope of the radial spectrum over `seeds` textures.
pub fn mean_spectral_slope(beta: f64, seeds: u64) -> f64 {
    let config = GeneratorConfig::default();
    let n = config.patch_size;
    (0..seeds)
        .map(|s| {
            let p = sample_texture(&config, beta, s).expect("valid texture");
            spectral_slope(&radial_power_spectrum(&p.pixels), 4, n / 4)
        })
        .sum::<f64>()
        / seeds as f64
}

fn check_spectrum() -> Check {
    let mut worst: f64 = 0.0;
    let mut detail = Vec::new();
    for beta in [1.2, 1.6] {
        let slope = mean_spectral_slope(beta, 20);
        worst = worst.max((slope + 2.0 * beta).abs() / (2.0 * beta));
        detail.push(format!("β = {beta}: slope {slope:.4}"));
    }
    Check::at_most(
        "texture_spectrum",
        0.15,
        worst,
        format!("relative deviation from −2β over 20 seeds ({})", detail.join(", ")),
    )
}

/// Runs every check. Each family draws from its own seeded stream.
pub fn run_suite(config: &VerifyConfig) -> VerificationReport {
    let stream = |k: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(k);
        rng
    };
    let t = config.trials;
    let mut checks = vec![
        check_loss_oracles(t, &mut stream(1)),
        check_loss_gradients(t.div_ceil(2), &mut stream(2)),
        check_end_to_end_gradients(t.div_ceil(2), &mut stream(3)),
        check_estimators(t, &mut stream(4)),
        check_residual_identity(t, &mut stream(5)),
    ];
    checks.push(check_residual_shrinkage(config.seed));
    checks.push(check_bound(t, config.seed));
    checks.push(check_gamma(&mut stream(6)));
    checks.push(check_spectrum());
    VerificationReport {
        schema: REPORT_SCHEMA_VERSION,
        passed: checks.iter().all(|c| c.passed),
        checks,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracles_agree_on_identical_embeddings() {
        let z = Array2::from_shape_fn((4, 2), |(_, d)| if d == 0 { 1.0 } else { 0.0 });
        assert!((sup_contrastive_oracle(z.view(), &[0, 0, 1, 1], 0.7) - 3f64.ln()).abs() < 1e-12);
        assert!((nt_xent_oracle(z.view(), &[1, 0, 3, 2], 0.7) - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn sign_error_in_term_b_is_detected() {
        let b = balanced_batch(3, 2, 5, 0.4, 3);
        let mut r = decompose(&b, 0.5).unwrap();
        assert!(residual_identity_error(&r) < 1e-12);
        r.term_b = -r.term_b;
        assert!(residual_identity_error(&r) > 1e-3);
    }

    #[test]
    fn small_suite_passes_and_lists_tolerances() {
        let report = run_suite(&VerifyConfig { trials: 20, seed: 5 });
        for c in &report.checks {
            assert!(c.passed, "{c:?}");
            assert!(c.tolerance.is_finite() && c.measured.is_finite());
        }
        assert!(report.passed);
        assert_eq!(report.checks.len(), 9);
    }
}
