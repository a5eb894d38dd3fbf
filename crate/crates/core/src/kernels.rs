//! Embedding batches and the linear kernel `k(x, x') = <φ(x), φ(x')>`.

use ndarray::{Array2, ArrayView2};

use crate::{Error, Result};

/// Maximum allowed deviation of a row norm from 1.
pub const NORM_TOLERANCE: f64 = 1e-6;

/// Unit-norm embeddings with per-sample class and domain labels.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatch {
    z: Array2<f64>,
    class_labels: Vec<usize>,
    domain_labels: Vec<u8>,
}

impl EmbeddingBatch {
    pub fn new(z: Array2<f64>, class_labels: Vec<usize>, domain_labels: Vec<u8>) -> Result<Self> {
        let n = z.nrows();
        if n < 2 {
            return Err(Error::InvalidBatch(format!("batch needs n >= 2, got {n}")));
        }
        if class_labels.len() != n || domain_labels.len() != n {
            return Err(Error::InvalidBatch(format!(
                "{n} rows but {} class labels and {} domain labels",
                class_labels.len(),
                domain_labels.len()
            )));
        }
        if let Some(&d) = domain_labels.iter().find(|&&d| d > 1) {
            return Err(Error::InvalidBatch(format!("domain label {d} is not 0 or 1")));
        }
        for (i, row) in z.rows().into_iter().enumerate() {
            let norm = row.dot(&row).sqrt();
            if !((norm - 1.0).abs() <= NORM_TOLERANCE) {
                return Err(Error::InvalidBatch(format!(
                    "row {i} has norm {norm}, expected 1 within {NORM_TOLERANCE}"
                )));
            }
        }
        Ok(Self {
            z,
            class_labels,
            domain_labels,
        })
    }

    /// Projects every row onto the unit sphere first.
    pub fn normalized(
        mut z: Array2<f64>,
        class_labels: Vec<usize>,
        domain_labels: Vec<u8>,
    ) -> Result<Self> {
        for mut row in z.rows_mut() {
            let norm = row.dot(&row).sqrt();
            if norm == 0.0 || !norm.is_finite() {
                return Err(Error::InvalidBatch("cannot normalize a zero row".into()));
            }
            row /= norm;
        }
        Self::new(z, class_labels, domain_labels)
    }

    pub fn z(&self) -> ArrayView2<'_, f64> {
        self.z.view()
    }

    pub fn class_labels(&self) -> &[usize] {
        &self.class_labels
    }

    pub fn domain_labels(&self) -> &[u8] {
        &self.domain_labels
    }

    pub fn len(&self) -> usize {
        self.z.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.z.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.z.ncols()
    }

    /// One more than the largest class label present.
    pub fn n_classes(&self) -> usize {
        self.class_labels.iter().max().map_or(0, |&c| c + 1)
    }

    /// Classes that actually occur, ascending.
    pub fn classes_present(&self) -> Vec<usize> {
        let mut seen = vec![false; self.n_classes()];
        for &c in &self.class_labels {
            seen[c] = true;
        }
        (0..seen.len()).filter(|&c| seen[c]).collect()
    }

    /// Indices in the (class, domain) cell.
    pub fn cell(&self, class: usize, domain: u8) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.class_labels[i] == class && self.domain_labels[i] == domain)
            .collect()
    }

    pub fn class_members(&self, class: usize) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.class_labels[i] == class)
            .collect()
    }

    /// Same embeddings with domains 0 and 1 exchanged.
    pub fn with_swapped_domains(&self) -> Self {
        Self {
            z: self.z.clone(),
            class_labels: self.class_labels.clone(),
            domain_labels: self.domain_labels.iter().map(|d| 1 - d).collect(),
        }
    }

    /// Subset of rows, in the given order.
    pub fn select(&self, idx: &[usize]) -> Result<Self> {
        let z = self.z.select(ndarray::Axis(0), idx);
        Self::new(
            z,
            idx.iter().map(|&i| self.class_labels[i]).collect(),
            idx.iter().map(|&i| self.domain_labels[i]).collect(),
        )
    }
}

/// Pairwise linear-kernel values over a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix(Array2<f64>);

impl GramMatrix {
    pub fn k(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.nrows() == 0
    }
}

/// Inner products of the rows of `z`: upper triangle computed, then mirrored.
pub fn inner_products(z: ArrayView2<'_, f64>) -> Array2<f64> {
    let n = z.nrows();
    let mut k = Array2::zeros((n, n));
    for i in 0..n {
        let zi = z.row(i);
        for j in i..n {
            let v = zi.dot(&z.row(j));
            k[[i, j]] = v;
            k[[j, i]] = v;
        }
    }
    k
}

pub fn gram(batch: &EmbeddingBatch) -> GramMatrix {
    GramMatrix(inner_products(batch.z()))
}

/// Two-valued label kernel `l(y, y') = Δl·1{y = y'} + l0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelKernel {
    pub delta_l: f64,
    pub l0: f64,
}

impl LabelKernel {
    /// Δl = K, the number of classes (supervised contrastive loss).
    pub fn supervised(n_classes: usize) -> Self {
        Self {
            delta_l: n_classes as f64,
            l0: 0.0,
        }
    }

    /// Δl = N, the number of instances (NT-Xent).
    pub fn instance(n_instances: usize) -> Self {
        Self {
            delta_l: n_instances as f64,
            l0: 0.0,
        }
    }

    pub fn eval(&self, y: usize, y2: usize) -> f64 {
        if y == y2 {
            self.delta_l + self.l0
        } else {
            self.l0
        }
    }
}

pub fn label_gram(labels: &[usize], kernel: LabelKernel) -> Array2<f64> {
    let n = labels.len();
    Array2::from_shape_fn((n, n), |(i, j)| kernel.eval(labels[i], labels[j]))
}

#[cfg(test)]
mod tests {
    use ndarray::array;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    use super::*;

    fn random_batch(n: usize, m: usize, seed: u64) -> EmbeddingBatch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = Array2::from_shape_fn((n, m), |_| StandardNormal.sample(&mut rng));
        EmbeddingBatch::normalized(z, (0..n).map(|i| i % 2).collect(), vec![0; n]).unwrap()
    }

    #[test]
    fn identical_rows_give_all_ones() {
        let b = EmbeddingBatch::new(array![[0.6, 0.8], [0.6, 0.8]], vec![0, 0], vec![0, 1]).unwrap();
        let g = gram(&b);
        for v in g.k().iter() {
            assert!((v - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn orthonormal_rows_have_zero_off_diagonal() {
        let b = EmbeddingBatch::new(array![[1.0, 0.0], [0.0, 1.0]], vec![0, 1], vec![0, 0]).unwrap();
        assert_eq!(gram(&b).k(), &array![[1.0, 0.0], [0.0, 1.0]]);
    }

    #[test]
    fn gram_matches_double_loop() {
        let b = random_batch(8, 4, 3);
        let g = gram(&b);
        for i in 0..8 {
            for j in 0..8 {
                let mut s = 0.0;
                for d in 0..4 {
                    s += b.z()[[i, d]] * b.z()[[j, d]];
                }
                assert!((g.k()[[i, j]] - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn batch_validation() {
        assert!(EmbeddingBatch::new(array![[1.0, 0.0]], vec![0], vec![0]).is_err());
        assert!(EmbeddingBatch::new(array![[1.0, 0.0], [0.5, 0.0]], vec![0, 0], vec![0, 0]).is_err());
        assert!(EmbeddingBatch::new(array![[1.0, 0.0], [0.0, 1.0]], vec![0], vec![0, 0]).is_err());
        assert!(EmbeddingBatch::new(array![[1.0, 0.0], [0.0, 1.0]], vec![0, 0], vec![0, 2]).is_err());
        let ok = EmbeddingBatch::new(
            array![[1.0 + 5e-7, 0.0], [0.0, 1.0]],
            vec![0, 0],
            vec![0, 1],
        );
        assert!(ok.is_ok());
    }

    #[test]
    fn label_gram_patterns() {
        let all_same = label_gram(&[2, 2, 2], LabelKernel { delta_l: 3.0, l0: 0.0 });
        assert!(all_same.iter().all(|&v| v == 3.0));

        let distinct = label_gram(&[0, 1, 2], LabelKernel { delta_l: 3.0, l0: 1.0 });
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(distinct[[i, j]], if i == j { 4.0 } else { 1.0 });
            }
        }
    }

    #[test]
    fn label_gram_matches_one_hot_inner_products() {
        let labels = [0, 2, 1, 2, 0, 1, 1];
        let one_hot = Array2::from_shape_fn((labels.len(), 3), |(i, c)| {
            if labels[i] == c {
                1.0
            } else {
                0.0
            }
        });
        let explicit = one_hot.dot(&one_hot.t());
        assert_eq!(label_gram(&labels, LabelKernel { delta_l: 1.0, l0: 0.0 }), explicit);
    }

    proptest! {
        #[test]
        fn gram_is_bounded_symmetric_unit_diagonal(seed in 0u64..500, n in 2usize..12, m in 1usize..6) {
            let g = gram(&random_batch(n, m, seed));
            for i in 0..n {
                prop_assert!((g.k()[[i, i]] - 1.0).abs() < 1e-12);
                for j in 0..n {
                    prop_assert_eq!(g.k()[[i, j]], g.k()[[j, i]]);
                    prop_assert!(g.k()[[i, j]].abs() <= 1.0 + 1e-12);
                }
            }
        }

        #[test]
        fn label_gram_takes_two_values(labels in proptest::collection::vec(0usize..4, 2..20),
                                       delta in 0.5f64..5.0, l0 in -2.0f64..2.0) {
            let l = label_gram(&labels, LabelKernel { delta_l: delta, l0 });
            let mut values: Vec<f64> = l.iter().copied().collect();
            values.sort_by(|a, b| a.partial_cmp(b).unwrap());
            values.dedup();
            prop_assert!(values.len() <= 2);
            prop_assert!(values.iter().all(|&v| v == l0 || v == delta + l0));
        }
    }
}
