//! Two-layer perceptron with a unit-norm output, and a linear head.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::Uniform;

use crate::kernels::EmbeddingBatch;
use crate::{Error, Result};

/// Floor on the pre-normalization norm.
pub const NORM_EPS: f64 = 1e-8;

fn uniform_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, bound: f64, rng: &mut R) -> Array2<f64> {
    let u = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    Array2::from_shape_fn((rows, cols), |_| rng.sample(u))
}

fn uniform_vector<R: Rng + ?Sized>(len: usize, bound: f64, rng: &mut R) -> Array1<f64> {
    let u = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    Array1::from_shape_fn(len, |_| rng.sample(u))
}

/// `φ(x) = normalize(relu(x·W1 + b1)·W2 + b2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

/// Intermediate values kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    x: Array2<f64>,
    pre_hidden: Array2<f64>,
    hidden: Array2<f64>,
    norms: Array1<f64>,
    /// Unit-norm outputs.
    pub z: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMapGrads {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl FeatureMap {
    /// Uniform initialization in `±1/√fan_in` for weights and biases.
    pub fn new<R: Rng + ?Sized>(input_dim: usize, hidden: usize, embedding: usize, rng: &mut R) -> Self {
        let b1 = 1.0 / (input_dim as f64).sqrt();
        let b2 = 1.0 / (hidden as f64).sqrt();
        Self {
            w1: uniform_matrix(input_dim, hidden, b1, rng),
            b1: uniform_vector(hidden, b1, rng),
            w2: uniform_matrix(hidden, embedding, b2, rng),
            b2: uniform_vector(embedding, b2, rng),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.nrows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.ncols()
    }

    pub fn embedding_dim(&self) -> usize {
        self.w2.ncols()
    }

    pub fn parameter_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    /// Pre-normalization output `relu(x·W1 + b1)·W2 + b2`.
    pub fn pre_norm(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let h = (x.dot(&self.w1) + &self.b1).mapv(|v| v.max(0.0));
        h.dot(&self.w2) + &self.b2
    }

    pub fn forward_cached(&self, x: ArrayView2<'_, f64>) -> Result<ForwardCache> {
        if x.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch(format!(
                "model expects {} inputs, got {}",
                self.input_dim(),
                x.ncols()
            )));
        }
        let pre_hidden = x.dot(&self.w1) + &self.b1;
        let hidden = pre_hidden.mapv(|v| v.max(0.0));
        let mut z = hidden.dot(&self.w2) + &self.b2;
        let mut norms = Array1::zeros(z.nrows());
        for (i, mut row) in z.rows_mut().into_iter().enumerate() {
            let norm = row.dot(&row).sqrt().max(NORM_EPS);
            norms[i] = norm;
            row /= norm;
        }
        Ok(ForwardCache {
            x: x.to_owned(),
            pre_hidden,
            hidden,
            norms,
            z,
        })
    }

    /// Embeds a labelled batch.
    pub fn forward(
        &self,
        x: ArrayView2<'_, f64>,
        class_labels: Vec<usize>,
        domain_labels: Vec<u8>,
    ) -> Result<EmbeddingBatch> {
        let cache = self.forward_cached(x)?;
        EmbeddingBatch::new(cache.z, class_labels, domain_labels)
    }

    /// Unit-norm embeddings without labels.
    pub fn embed(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        Ok(self.forward_cached(x)?.z)
    }

    /// Back-propagates `∂L/∂z` through the normalization and both layers.
    pub fn backward(&self, cache: &ForwardCache, grad_z: &Array2<f64>) -> FeatureMapGrads {
        let mut grad_u = grad_z.clone();
        for (i, mut row) in grad_u.rows_mut().into_iter().enumerate() {
            let z = cache.z.row(i);
            let norm = cache.norms[i];
            if norm > NORM_EPS {
                let proj = z.dot(&row);
                row.scaled_add(-proj, &z);
            }
            row /= norm;
        }
        let w2 = cache.hidden.t().dot(&grad_u);
        let b2 = grad_u.sum_axis(Axis(0));
        let mut grad_h = grad_u.dot(&self.w2.t());
        grad_h.zip_mut_with(&cache.pre_hidden, |g, &a| {
            if a <= 0.0 {
                *g = 0.0;
            }
        });
        FeatureMapGrads {
            w1: cache.x.t().dot(&grad_h),
            b1: grad_h.sum_axis(Axis(0)),
            w2,
            b2,
        }
    }

    /// SGD step with L2 weight decay:
    /// `p ← p − lr·(g + wd·p)`.
    pub fn sgd_step(&mut self, g: &FeatureMapGrads, lr: f64, weight_decay: f64) {
        sgd(&mut self.w1, &g.w1, lr, weight_decay);
        sgd(&mut self.b1, &g.b1, lr, weight_decay);
        sgd(&mut self.w2, &g.w2, lr, weight_decay);
        sgd(&mut self.b2, &g.b2, lr, weight_decay);
    }

    pub fn is_finite(&self) -> bool {
        [self.w1.iter(), self.w2.iter()]
            .into_iter()
            .flatten()
            .chain(self.b1.iter())
            .chain(self.b2.iter())
            .all(|v| v.is_finite())
    }
}

fn sgd<D: ndarray::Dimension>(
    p: &mut ndarray::Array<f64, D>,
    g: &ndarray::Array<f64, D>,
    lr: f64,
    weight_decay: f64,
) {
    p.zip_mut_with(g, |p, &g| *p -= lr * (g + weight_decay * *p));
}

/// Logits `z·W + b` for `K` classes.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearHead {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadGrads {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    /// Gradient flowing back into the embeddings.
    pub input: Array2<f64>,
}

impl LinearHead {
    pub fn new<R: Rng + ?Sized>(embedding: usize, n_classes: usize, rng: &mut R) -> Self {
        let b = 1.0 / (embedding as f64).sqrt();
        Self {
            weight: uniform_matrix(embedding, n_classes, b, rng),
            bias: uniform_vector(n_classes, b, rng),
        }
    }

    pub fn n_classes(&self) -> usize {
        self.weight.ncols()
    }

    pub fn logits(&self, z: ArrayView2<'_, f64>) -> Array2<f64> {
        z.dot(&self.weight) + &self.bias
    }

    pub fn backward(&self, z: ArrayView2<'_, f64>, grad_logits: &Array2<f64>) -> HeadGrads {
        HeadGrads {
            weight: z.t().dot(grad_logits),
            bias: grad_logits.sum_axis(Axis(0)),
            input: grad_logits.dot(&self.weight.t()),
        }
    }

    pub fn sgd_step(&mut self, g: &HeadGrads, lr: f64, weight_decay: f64) {
        sgd(&mut self.weight, &g.weight, lr, weight_decay);
        sgd(&mut self.bias, &g.bias, lr, weight_decay);
    }

    pub fn is_finite(&self) -> bool {
        self.weight.iter().chain(self.bias.iter()).all(|v| v.is_finite())
    }
}

/// Row-wise softmax.
pub fn softmax(logits: &Array2<f64>) -> Array2<f64> {
    let mut p = logits.clone();
    for mut row in p.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let s = row.sum();
        row /= s;
    }
    p
}
