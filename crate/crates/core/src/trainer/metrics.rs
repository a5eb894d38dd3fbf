//! Accuracy and ranking metrics over class scores.

use ndarray::{Array2, ArrayView2};

use crate::{Error, Result};

/// Mann–Whitney AUC of `scores` for `positive` against the rest, with ties
/// counted as one half. `None` when either side is empty.
pub fn binary_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n = scores.len();
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = n - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if positive[k] {
                rank_sum += avg_rank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos * n_neg) as f64)
}

fn require_all_classes(labels: &[usize], k: usize) -> Result<()> {
    for c in 0..k {
        if !labels.contains(&c) {
            return Err(Error::EstimatorUndefined(format!("class {c} is absent from the evaluation set")));
        }
    }
    Ok(())
}

/// Fraction of rows whose arg-max score is the label.
pub fn accuracy(scores: ArrayView2<'_, f64>, labels: &[usize]) -> f64 {
    let hits = scores
        .rows()
        .into_iter()
        .zip(labels)
        .filter(|(row, &y)| {
            let best = row
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc })
                .0;
            best == y
        })
        .count();
    hits as f64 / labels.len() as f64
}

/// Macro average over unordered class pairs of the two directed pairwise
/// AUCs (Hand and Till).
pub fn ovo_auc(scores: ArrayView2<'_, f64>, labels: &[usize]) -> Result<f64> {
    let k = scores.ncols();
    require_all_classes(labels, k)?;
    let directed = |a: usize, b: usize| {
        let idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == a || labels[i] == b).collect();
        let s: Vec<f64> = idx.iter().map(|&i| scores[[i, a]]).collect();
        let p: Vec<bool> = idx.iter().map(|&i| labels[i] == a).collect();
        binary_auc(&s, &p).expect("both classes present")
    };
    let mut total = 0.0;
    let mut pairs = 0;
    for a in 0..k {
        for b in a + 1..k {
            total += (directed(a, b) + directed(b, a)) / 2.0;
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}

/// Macro average of one-vs-rest AUCs.
pub fn ovr_auc(scores: ArrayView2<'_, f64>, labels: &[usize]) -> Result<f64> {
    let k = scores.ncols();
    require_all_classes(labels, k)?;
    let total: f64 = (0..k)
        .map(|c| {
            let s = scores.column(c).to_vec();
            let p: Vec<bool> = labels.iter().map(|&y| y == c).collect();
            binary_auc(&s, &p).expect("class present")
        })
        .sum();
    Ok(total / k as f64)
}

/// Mean cross-entropy of probability rows.
pub fn mean_log_loss(probs: &Array2<f64>, labels: &[usize]) -> f64 {
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, &y)| -probs[[i, y]].max(f64::MIN_POSITIVE).ln())
        .sum();
    total / labels.len() as f64
}
