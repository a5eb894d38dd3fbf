//! Acceptance criteria 1 to 9. Prints one line per criterion and exits
//! nonzero if any fails.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ctda::{cmd_generate, cmd_sweep_tau, cmd_train, ExperimentConfig, RunSummary};
use ctda_core::discrepancy::{cmmd_sq, dcmmd_sq, hsic, immd_sq, DiscrepancyReport};
use ctda_core::kernels::EmbeddingBatch;
use ctda_core::losses::{cross_entropy, nt_xent, sup_contrastive};
use ctda_core::synthgen::{radial_power_spectrum, sample_texture, spectral_slope, GeneratorConfig};
use ctda_core::theory::{decompose, lemma2_bound_check};
use ctda_core::trainer::{FeatureMap, Strategy};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

type Outcome = (bool, String);

fn gauss(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| {
        let v: f64 = StandardNormal.sample(rng);
        v
    })
}

fn normalize(mut z: Array2<f64>) -> Array2<f64> {
    for mut r in z.rows_mut() {
        let n = r.dot(&r).sqrt();
        r /= n;
    }
    z
}

fn sim(z: &Array2<f64>, i: usize, j: usize) -> f64 {
    (0..z.ncols()).map(|d| z[[i, d]] * z[[j, d]]).sum()
}

/// −(1/n) Σ_i (1/|P(i)|) Σ_{p∈P(i)} log softmax_{a≠i}(s_ia)_p
fn supcon_direct(z: &Array2<f64>, y: &[usize], tau: f64) -> f64 {
    let n = z.nrows();
    let mut acc = 0.0;
    for i in 0..n {
        let lse = (0..n).filter(|&a| a != i).map(|a| (sim(z, i, a) / tau).exp()).sum::<f64>().ln();
        let p: Vec<usize> = (0..n).filter(|&p| p != i && y[p] == y[i]).collect();
        acc += p.iter().map(|&p| lse - sim(z, i, p) / tau).sum::<f64>() / p.len() as f64;
    }
    acc / n as f64
}

fn ntxent_direct(z: &Array2<f64>, partner: &[usize], tau: f64) -> f64 {
    let n = z.nrows();
    let mut acc = 0.0;
    for i in 0..n {
        let lse = (0..n).filter(|&a| a != i).map(|a| (sim(z, i, a) / tau).exp()).sum::<f64>().ln();
        acc += lse - sim(z, i, partner[i]) / tau;
    }
    acc / n as f64
}

fn ce_direct(logits: &Array2<f64>, y: &[usize]) -> f64 {
    let mut acc = 0.0;
    for (i, &c) in y.iter().enumerate() {
        let lse = logits.row(i).iter().map(|v| v.exp()).sum::<f64>().ln();
        acc += lse - logits[[i, c]];
    }
    acc / y.len() as f64
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let k = rng.random_range(2..5);
        let n = 2 * k * rng.random_range(1..4);
        let z = normalize(gauss(n, rng.random_range(2..10), &mut rng));
        let y: Vec<usize> = (0..n).map(|i| i % k).collect();
        let partner: Vec<usize> = (0..n).map(|i| i ^ 1).collect();
        let tau = rng.random_range(0.05..2.0);
        let logits = gauss(n, k, &mut rng);
        worst = worst
            .max((sup_contrastive(z.view(), &y, tau).unwrap().value - supcon_direct(&z, &y, tau)).abs())
            .max((nt_xent(z.view(), &partner, tau).unwrap().value - ntxent_direct(&z, &partner, tau)).abs())
            .max((cross_entropy(logits.view(), &y).unwrap().value - ce_direct(&logits, &y)).abs());
    }
    (worst <= 1e-12, format!("max deviation {worst:.2e} over 100 batches (≤ 1e-12)"))
}

fn fd_grad(x: &Array2<f64>, h: f64, f: impl Fn(&Array2<f64>) -> f64) -> Array2<f64> {
    let mut g = Array2::zeros(x.dim());
    for ((r, c), out) in g.indexed_iter_mut() {
        let mut up = x.clone();
        up[[r, c]] += h;
        let mut down = x.clone();
        down[[r, c]] -= h;
        *out = (f(&up) - f(&down)) / (2.0 * h);
    }
    g
}

fn rel(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let norm = |m: &Array2<f64>| m.iter().map(|v| v * v).sum::<f64>().sqrt();
    norm(&(a - b)) / norm(a).max(norm(b)).max(1e-300)
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let (mut loss_worst, mut e2e_worst): (f64, f64) = (0.0, 0.0);
    for _ in 0..50 {
        let n = 12;
        let y: Vec<usize> = (0..n).map(|i| i % 3).collect();
        let tau = rng.random_range(0.1..1.5);
        let z = normalize(gauss(n, 5, &mut rng));
        let analytic = sup_contrastive(z.view(), &y, tau).unwrap().grad_z;
        let numeric = fd_grad(&z, 1e-6, |p| sup_contrastive(p.view(), &y, tau).unwrap().value);
        loss_worst = loss_worst.max(rel(&analytic, &numeric));

        let phi = FeatureMap::new(4, 6, 3, &mut rng);
        let x = gauss(n, 4, &mut rng);
        let cache = phi.forward_cached(x.view()).unwrap();
        let gz = sup_contrastive(cache.z.view(), &y, tau).unwrap().grad_z;
        let grads = phi.backward(&cache, &gz);
        let numeric = fd_grad(&phi.w1, 1e-5, |w| {
            let mut q = phi.clone();
            q.w1 = w.clone();
            sup_contrastive(q.embed(x.view()).unwrap().view(), &y, tau).unwrap().value
        });
        e2e_worst = e2e_worst.max(rel(&grads.w1, &numeric));
        let numeric = fd_grad(&phi.w2, 1e-5, |w| {
            let mut q = phi.clone();
            q.w2 = w.clone();
            sup_contrastive(q.embed(x.view()).unwrap().view(), &y, tau).unwrap().value
        });
        e2e_worst = e2e_worst.max(rel(&grads.w2, &numeric));
    }
    (
        loss_worst <= 1e-4 && e2e_worst <= 1e-3,
        format!("loss {loss_worst:.2e} (≤ 1e-4), end to end {e2e_worst:.2e} (≤ 1e-3) over 50 instances"),
    )
}

fn mean_of(z: &Array2<f64>, idx: &[usize]) -> Vec<f64> {
    (0..z.ncols()).map(|d| idx.iter().map(|&i| z[[i, d]]).sum::<f64>() / idx.len() as f64).collect()
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Estimators through explicit embedding means rather than kernel sums.
fn oracles(b: &EmbeddingBatch, k: usize) -> [f64; 4] {
    let z = b.z().to_owned();
    let n = b.len();
    let idx = |c: usize, d: Option<u8>| -> Vec<usize> {
        (0..n)
            .filter(|&i| b.class_labels()[i] == c && d.is_none_or(|d| b.domain_labels()[i] == d))
            .collect()
    };
    let pi: Vec<f64> = (0..k).map(|c| idx(c, None).len() as f64 / n as f64).collect();
    let mu: Vec<[Vec<f64>; 2]> = (0..k).map(|c| [mean_of(&z, &idx(c, Some(0))), mean_of(&z, &idx(c, Some(1)))]).collect();
    let pooled: Vec<Vec<f64>> = (0..k).map(|c| mean_of(&z, &idx(c, None))).collect();
    let cmmd: f64 = (0..k).map(|c| pi[c] * dist2(&mu[c][0], &mu[c][1])).sum();
    let norm = 1.0 - pi.iter().map(|p| p * p).sum::<f64>();
    let mut dcmmd = 0.0;
    let mut immd = 0.0;
    for a in 0..k {
        for c in 0..k {
            immd += pi[a] * pi[c] * dist2(&pooled[a], &pooled[c]);
            if a != c {
                let s: f64 = [(0, 0), (0, 1), (1, 0), (1, 1)]
                    .iter()
                    .map(|&(d1, d2)| dist2(&mu[a][d2], &mu[c][d1]))
                    .sum();
                dcmmd += pi[a] * pi[c] / norm * s / 4.0;
            }
        }
    }
    let km = z.dot(&z.t());
    let lm = Array2::from_shape_fn((n, n), |(i, j)| (b.class_labels()[i] == b.class_labels()[j]) as u8 as f64);
    let h = Array2::from_shape_fn((n, n), |(i, j)| (i == j) as u8 as f64 - 1.0 / n as f64);
    let hsic = km.dot(&h).dot(&lm).dot(&h).diag().sum() / ((n - 1) * (n - 1)) as f64;
    [cmmd, dcmmd, immd, hsic]
}

/// Σ_c π_c (E k(x,x') within domain 0 + within domain 1 − 2 across), all
/// ordered pairs.
fn cmmd_kernel_expansion(b: &EmbeddingBatch) -> f64 {
    let z = b.z().to_owned();
    let n = b.len();
    let k = b.class_labels().iter().max().unwrap() + 1;
    let mut total = 0.0;
    for c in 0..k {
        let cell = |d: u8| -> Vec<usize> {
            (0..n).filter(|&i| b.class_labels()[i] == c && b.domain_labels()[i] == d).collect()
        };
        let (a, e) = (cell(0), cell(1));
        let mean_pair = |u: &[usize], v: &[usize]| {
            u.iter().flat_map(|&i| v.iter().map(move |&j| (i, j))).map(|(i, j)| sim(&z, i, j)).sum::<f64>()
                / (u.len() * v.len()) as f64
        };
        let pi = (a.len() + e.len()) as f64 / n as f64;
        total += pi * (mean_pair(&a, &a) + mean_pair(&e, &e) - 2.0 * mean_pair(&a, &e));
    }
    total
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let k = rng.random_range(2..5);
        let mut classes = Vec::new();
        let mut domains = Vec::new();
        for c in 0..k {
            for d in 0..2u8 {
                for _ in 0..rng.random_range(1..5) {
                    classes.push(c);
                    domains.push(d);
                }
            }
        }
        let z = gauss(classes.len(), rng.random_range(2..8), &mut rng);
        let b = EmbeddingBatch::normalized(z, classes, domains).unwrap();
        let kmat = b.z().dot(&b.z().t());
        let lmat = Array2::from_shape_fn((b.len(), b.len()), |(i, j)| {
            (b.class_labels()[i] == b.class_labels()[j]) as u8 as f64
        });
        let got = [cmmd_sq(&b).unwrap(), dcmmd_sq(&b).unwrap(), immd_sq(&b).unwrap(), hsic(&kmat, &lmat).unwrap()];
        for (g, o) in got.iter().zip(oracles(&b, k)) {
            worst = worst.max((g - o).abs());
        }
        worst = worst.max((got[0] - cmmd_kernel_expansion(&b)).abs());
    }
    (worst <= 1e-10, format!("max deviation {worst:.2e} over 100 batches (≤ 1e-10)"))
}

fn clustered(k: usize, per_cell: usize, m: usize, spread: f64, seed: u64) -> EmbeddingBatch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 2 * k * per_cell;
    let classes: Vec<usize> = (0..n).map(|i| i % k).collect();
    let domains: Vec<u8> = (0..n).map(|i| ((i / k) % 2) as u8).collect();
    let noise = gauss(n, m, &mut rng);
    let z = Array2::from_shape_fn((n, m), |(i, d)| (d == classes[i]) as u8 as f64 + spread * noise[[i, d]]);
    EmbeddingBatch::normalized(z, classes, domains).unwrap()
}

fn criterion_4() -> Outcome {
    let batches: Vec<EmbeddingBatch> = (0..30).map(|s| clustered(3, 5, 8, 0.6, 4000 + s)).collect();
    let mean = |tau: f64| batches.iter().map(|b| decompose(b, tau).unwrap().residual.abs()).sum::<f64>() / 30.0;
    let (r5, r05, r02) = (mean(5.0), mean(0.5), mean(0.2));
    (
        r5 < r05 && r05 < r02,
        format!("mean |residual|: τ=5 {r5:.4}, τ=0.5 {r05:.4}, τ=0.2 {r02:.4}"),
    )
}

fn criterion_5() -> Outcome {
    let alpha = (0..10)
        .map(|s| DiscrepancyReport::compute(&clustered(2, 16, 8, 0.8, 5000 + s), Default::default()).unwrap().alpha().unwrap())
        .sum::<f64>()
        / 10.0;
    let held = (0..100)
        .filter(|&s| lemma2_bound_check(&clustered(2, 16, 8, 0.8, 6000 + s), 0.5, alpha).unwrap().satisfied_with_slack)
        .count();
    (held >= 95, format!("{held}/100 batches satisfy the bound (≥ 95)"))
}

fn criterion_8() -> Outcome {
    let config = GeneratorConfig::default();
    let n = config.patch_size;
    let mut ok = true;
    let mut parts = Vec::new();
    for beta in [1.2, 1.6] {
        let slope = (0..20)
            .map(|s| spectral_slope(&radial_power_spectrum(&sample_texture(&config, beta, 800 + s).unwrap().pixels), 4, n / 4))
            .sum::<f64>()
            / 20.0;
        let dev = (slope + 2.0 * beta).abs() / (2.0 * beta);
        ok &= dev <= 0.15;
        parts.push(format!("β={beta}: slope {slope:.3} ({:.1}% off)", dev * 100.0));
    }
    (ok, parts.join(", "))
}

fn config_at(root: &Path) -> ExperimentConfig {
    ExperimentConfig {
        outputs: root.to_path_buf(),
        ..ExperimentConfig::default()
    }
}

fn find(summaries: &[RunSummary], s: Strategy) -> &RunSummary {
    summaries.iter().find(|r| r.strategy == s).unwrap()
}

fn criterion_7(summaries: &[RunSummary]) -> Outcome {
    let (ce, lcp, scce) = (
        find(summaries, Strategy::Ce).test,
        find(summaries, Strategy::SupContrLcp).test,
        find(summaries, Strategy::SupContrCe).test,
    );
    (
        lcp.cmmd_sq < ce.cmmd_sq && scce.dcmmd_sq > ce.dcmmd_sq && lcp.accuracy >= 0.90,
        format!(
            "CMMD² LCP {:.4} vs CE {:.4}; DCMMD² SCCE {:.4} vs CE {:.4}; LCP accuracy {:.3}",
            lcp.cmmd_sq, ce.cmmd_sq, scce.dcmmd_sq, ce.dcmmd_sq, lcp.accuracy
        ),
    )
}

fn criterion_6(config: &ExperimentConfig) -> Outcome {
    let rows = cmd_sweep_tau(config).unwrap();
    let rho = |tau: f64, term: &str| {
        rows.iter().find(|r| r.tau == tau && r.term == term).map(|r| r.rho).unwrap_or(f64::NAN)
    };
    let signs = [rho(0.5, "cmmd"), rho(0.5, "a"), rho(0.5, "b"), rho(0.5, "c")];
    let pattern = signs[0] > 0.0 && signs[1] > 0.0 && signs[2] < 0.0 && signs[3] < 0.0;
    let (a05, a005) = (rho(0.5, "a").abs(), rho(0.05, "a").abs());
    (
        pattern && a05 >= a005,
        format!("ρ at τ=0.5 (CMMD, A, B, C) = {signs:.3?}; |ρ_A| 0.5 {a05:.3} vs 0.05 {a005:.3}"),
    )
}

fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn criterion_9(first: &Path, second: &Path) -> Outcome {
    let config = config_at(second);
    cmd_generate(&config, None).unwrap();
    cmd_train(&config).unwrap();
    let mut mismatched = Vec::new();
    let mut count = 0;
    for sub in ["dataset", "runs"] {
        let (a, b) = (tree(&first.join(sub)), tree(&second.join(sub)));
        count += a.len();
        if a.len() != b.len() {
            mismatched.push(format!("{sub}: {} vs {} files", a.len(), b.len()));
        }
        for ((pa, ba), (_, bb)) in a.iter().zip(&b) {
            if ba != bb {
                mismatched.push(pa.display().to_string());
            }
        }
    }
    (
        mismatched.is_empty() && count > 0,
        format!("{count} files compared, {} differ {:?}", mismatched.len(), mismatched.iter().take(3).collect::<Vec<_>>()),
    )
}

fn main() {
    let tmp = tempfile::tempdir().unwrap();
    let (first, second) = (tmp.path().join("first"), tmp.path().join("second"));
    let config = config_at(&first);

    let mut results: Vec<(u32, Outcome, f64)> = Vec::new();
    let mut run = |id: u32, f: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let outcome = f();
        let secs = t.elapsed().as_secs_f64();
        println!("criterion {id}: {} ({secs:.1}s) {}", if outcome.0 { "PASS" } else { "FAIL" }, outcome.1);
        results.push((id, outcome, secs));
    };
    run(1, &mut criterion_1);
    run(2, &mut criterion_2);
    run(3, &mut criterion_3);
    run(4, &mut criterion_4);
    run(5, &mut criterion_5);
    let mut summaries = Vec::new();
    run(7, &mut || {
        cmd_generate(&config, None).unwrap();
        summaries = cmd_train(&config).unwrap();
        criterion_7(&summaries)
    });
    run(6, &mut || criterion_6(&config));
    run(8, &mut criterion_8);
    run(9, &mut || criterion_9(&first, &second));

    let failed: Vec<u32> = results.iter().filter(|r| !r.1 .0).map(|r| r.0).collect();
    if failed.is_empty() {
        println!("acceptance: all 9 criteria pass");
    } else {
        println!("acceptance: failing criteria {failed:?}");
        std::process::exit(1);
    }
}
