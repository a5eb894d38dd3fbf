//! The three training strategies and evaluation.

use ndarray::{Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::{PreparedData, Samples};
use super::features::InputEncoding;
use super::log::{EpochRecord, ExperimentLog, Phase, LOG_SCHEMA_VERSION};
use super::metrics::{accuracy, mean_log_loss, ovo_auc, ovr_auc};
use super::model::{softmax, FeatureMap, LinearHead};
use super::sampler::BalancedSampler;
use super::schedule::{cosine_lr, TemperatureSchedule};
use crate::discrepancy::{cmmd_sq, dcmmd_sq};
use crate::kernels::EmbeddingBatch;
use crate::losses::{cross_entropy, sup_contrastive};
use crate::theory::decompose;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Strategy {
    /// End-to-end cross-entropy.
    #[serde(rename = "CE")]
    Ce,
    /// Supervised contrastive feature map, then a linear probe.
    #[serde(rename = "SupContrLCP")]
    SupContrLcp,
    /// As `SupContrLcp`, then all parameters under cross-entropy.
    #[serde(rename = "SupContrCE")]
    SupContrCe,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Ce, Strategy::SupContrLcp, Strategy::SupContrCe];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Ce => "CE",
            Strategy::SupContrLcp => "SupContrLCP",
            Strategy::SupContrCe => "SupContrCE",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub strategy: Strategy,
    /// Epochs of the contrastive phase, and of each cross-entropy phase.
    pub epochs: usize,
    /// Epochs of the linear probe.
    pub probe_epochs: usize,
    pub base_lr: f64,
    pub weight_decay: f64,
    pub cosine_period: usize,
    pub batch_size: usize,
    pub temperature_schedule: TemperatureSchedule,
    pub hidden_dim: usize,
    pub embedding_dim: usize,
    pub encoding: InputEncoding,
    /// Samples per (class, domain) cell in the fixed monitor batch.
    pub monitor_per_cell: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::SupContrLcp,
            epochs: 100,
            probe_epochs: 20,
            base_lr: 1e-3,
            weight_decay: 1e-4,
            cosine_period: 4,
            batch_size: 30,
            temperature_schedule: TemperatureSchedule::default(),
            hidden_dim: 128,
            embedding_dim: 32,
            encoding: InputEncoding::default(),
            monitor_per_cell: 20,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.temperature_schedule.validate()?;
        let bad = |msg: &str| Err(Error::Config(msg.to_owned()));
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        if self.strategy != Strategy::Ce && self.probe_epochs == 0 {
            return bad("probe_epochs must be positive for contrastive strategies");
        }
        if !(self.base_lr >= 0.0 && self.base_lr.is_finite()) {
            return bad("base_lr must be finite and non-negative");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay must be finite and non-negative");
        }
        if self.batch_size == 0 || !self.batch_size.is_multiple_of(2) {
            return bad("batch_size must be a positive multiple of the domain count");
        }
        if self.cosine_period == 0 {
            return bad("cosine_period must be positive");
        }
        if self.hidden_dim == 0 || self.embedding_dim == 0 {
            return bad("layer widths must be positive");
        }
        if self.monitor_per_cell < 2 {
            return bad("monitor_per_cell must be at least 2");
        }
        if let InputEncoding::Pooled { side: 0 } = self.encoding {
            return bad("pooled side must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutput {
    pub feature_map: FeatureMap,
    pub head: LinearHead,
    pub log: ExperimentLog,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub ovo_auc: f64,
    pub ovr_auc: f64,
    pub cmmd_sq: f64,
    pub dcmmd_sq: f64,
    pub loss: f64,
}

/// Accuracy, AUCs and cross-entropy of the head's softmax scores, and the
/// discrepancies of the embeddings.
pub fn evaluate(phi: &FeatureMap, head: &LinearHead, samples: &Samples) -> Result<Evaluation> {
    let z = phi.embed(samples.x.view())?;
    let probs = softmax(&head.logits(z.view()));
    let batch = EmbeddingBatch::new(z, samples.classes.clone(), samples.domains.clone())?;
    Ok(Evaluation {
        accuracy: accuracy(probs.view(), &samples.classes),
        ovo_auc: ovo_auc(probs.view(), &samples.classes)?,
        ovr_auc: ovr_auc(probs.view(), &samples.classes)?,
        cmmd_sq: cmmd_sq(&batch)?,
        dcmmd_sq: dcmmd_sq(&batch)?,
        loss: mean_log_loss(&probs, &samples.classes),
    })
}

/// Class scores `softmax(z·μ_c/τ)` against the training class means.
fn nearest_mean_scores(z: ArrayView2<'_, f64>, means: &Array2<f64>, tau: f64) -> Array2<f64> {
    softmax(&(z.dot(&means.t()) / tau))
}

fn class_means(z: &Array2<f64>, classes: &[usize], k: usize) -> Array2<f64> {
    let mut means = Array2::zeros((k, z.ncols()));
    let mut counts = vec![0usize; k];
    for (row, &c) in z.rows().into_iter().zip(classes) {
        let mut m = means.row_mut(c);
        m += &row;
        counts[c] += 1;
    }
    for (mut m, &n) in means.axis_iter_mut(Axis(0)).zip(&counts) {
        m /= n.max(1) as f64;
    }
    means
}

struct Trainer<'a> {
    config: &'a TrainConfig,
    data: &'a PreparedData,
    phi: FeatureMap,
    head: LinearHead,
    sampler: BalancedSampler,
    rng: ChaCha8Rng,
    monitor: Samples,
    log: ExperimentLog,
}

struct Best {
    auc: f64,
    loss: f64,
    row: usize,
    phi: FeatureMap,
    head: LinearHead,
}

fn gather(samples: &Samples, idx: &[usize]) -> (Array2<f64>, Vec<usize>) {
    (
        samples.x.select(Axis(0), idx),
        idx.iter().map(|&i| samples.classes[i]).collect(),
    )
}

impl Trainer<'_> {
    fn tau(&self, epoch: usize) -> f64 {
        self.config.temperature_schedule.at(epoch)
    }

    fn diverged(&self, epoch: usize, detail: String) -> Error {
        Error::Diverged { epoch, detail }
    }

    fn run_phase(&mut self, phase: Phase, epochs: usize, select: bool) -> Result<()> {
        let mut best: Option<Best> = None;
        for phase_epoch in 0..epochs {
            let epoch = self.log.records.len();
            let lr = cosine_lr(self.config.base_lr, phase_epoch, self.config.cosine_period);
            let tau = self.tau(epoch);
            let batches = self.sampler.epoch(&mut self.rng);
            let mut total = 0.0;
            for idx in &batches {
                let (x, y) = gather(&self.data.train, idx);
                let loss = self.step(phase, x.view(), &y, lr, tau)?;
                if !loss.is_finite() {
                    return Err(self.diverged(epoch, format!("{phase:?} batch loss is {loss}")));
                }
                total += loss;
            }
            if !self.phi.is_finite() || !self.head.is_finite() {
                return Err(self.diverged(epoch, "non-finite parameters".into()));
            }
            let mut record = self.record(phase, epoch, phase_epoch, lr, tau, total / batches.len() as f64)?;
            if select {
                let better = match &best {
                    None => true,
                    Some(b) => {
                        record.val_ovo_auc > b.auc || (record.val_ovo_auc == b.auc && record.val_loss < b.loss)
                    }
                };
                if better {
                    best = Some(Best {
                        auc: record.val_ovo_auc,
                        loss: record.val_loss,
                        row: epoch,
                        phi: self.phi.clone(),
                        head: self.head.clone(),
                    });
                }
            }
            record.selected = false;
            self.log.records.push(record);
        }
        if let Some(b) = best {
            self.phi = b.phi;
            self.head = b.head;
            for r in &mut self.log.records {
                r.selected = r.epoch == b.row;
            }
        }
        Ok(())
    }

    fn step(&mut self, phase: Phase, x: ArrayView2<'_, f64>, y: &[usize], lr: f64, tau: f64) -> Result<f64> {
        let (wd, cache) = (self.config.weight_decay, self.phi.forward_cached(x)?);
        match phase {
            Phase::Contrastive => {
                let res = sup_contrastive(cache.z.view(), y, tau)?;
                let g = self.phi.backward(&cache, &res.grad_z);
                self.phi.sgd_step(&g, lr, wd);
                Ok(res.value)
            }
            Phase::LinearProbe => {
                let res = cross_entropy(self.head.logits(cache.z.view()).view(), y)?;
                let g = self.head.backward(cache.z.view(), &res.grad_z);
                self.head.sgd_step(&g, lr, wd);
                Ok(res.value)
            }
            Phase::CrossEntropy => {
                let res = cross_entropy(self.head.logits(cache.z.view()).view(), y)?;
                let hg = self.head.backward(cache.z.view(), &res.grad_z);
                let g = self.phi.backward(&cache, &hg.input);
                self.head.sgd_step(&hg, lr, wd);
                self.phi.sgd_step(&g, lr, wd);
                Ok(res.value)
            }
        }
    }

    fn record(
        &self,
        phase: Phase,
        epoch: usize,
        phase_epoch: usize,
        lr: f64,
        tau: f64,
        train_loss: f64,
    ) -> Result<EpochRecord> {
        let z = self.phi.embed(self.monitor.x.view())?;
        let batch = EmbeddingBatch::new(z, self.monitor.classes.clone(), self.monitor.domains.clone())?;
        let d = decompose(&batch, tau)?;
        let cmmd = cmmd_sq(&batch)?;
        let dcmmd = dcmmd_sq(&batch)?;

        let val = &self.data.validation;
        let zv = self.phi.embed(val.x.view())?;
        let probs = match phase {
            Phase::Contrastive => {
                let zt = self.phi.embed(self.data.train.x.view())?;
                let means = class_means(&zt, &self.data.train.classes, self.data.n_classes);
                nearest_mean_scores(zv.view(), &means, tau)
            }
            _ => softmax(&self.head.logits(zv.view())),
        };
        Ok(EpochRecord {
            schema: LOG_SCHEMA_VERSION,
            epoch,
            phase,
            phase_epoch,
            lr,
            tau,
            train_loss,
            val_accuracy: accuracy(probs.view(), &val.classes),
            val_ovo_auc: ovo_auc(probs.view(), &val.classes)?,
            val_loss: mean_log_loss(&probs, &val.classes),
            contrastive_loss: d.loss,
            cmmd_sq: cmmd,
            dcmmd_sq: dcmmd,
            cmmd_quarter: d.cmmd_quarter,
            term_a: d.term_a,
            term_b: d.term_b,
            term_c: d.term_c,
            log_const: d.log_const,
            residual: d.residual,
            selected: false,
        })
    }
}

/// Trains a feature map and head under `config.strategy`.
///
/// Every epoch is logged. In the final classifier phase the parameters with
/// the best validation one-vs-one AUC are retained, ties going to the lower
/// validation cross-entropy; that row carries `selected = true`. During the
/// contrastive phase validation scores come from the nearest training class
/// mean. The logged temperature is the schedule at the global epoch.
pub fn train(config: &TrainConfig, data: &PreparedData) -> Result<TrainOutput> {
    config.validate()?;
    if config.encoding != data.encoding {
        return Err(Error::Config(format!(
            "config encoding {:?} differs from prepared data {:?}",
            config.encoding, data.encoding
        )));
    }
    let k = data.n_classes;
    let train = &data.train;
    let sampler = BalancedSampler::new(&train.classes, &train.domains, k, config.batch_size)?;
    let smallest = train.cell_sizes(k).into_iter().min().unwrap_or(0);
    let per_cell = config.monitor_per_cell.min(smallest);
    if per_cell < 1 {
        return Err(Error::InvalidBatch("training split has an empty cell".into()));
    }
    let monitor = train.select(&train.balanced_prefix(k, per_cell));

    let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let phi = FeatureMap::new(data.encoding.dim(), config.hidden_dim, config.embedding_dim, &mut init_rng);
    let head = LinearHead::new(config.embedding_dim, k, &mut init_rng);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);

    let mut t = Trainer {
        config,
        data,
        phi,
        head,
        sampler,
        rng,
        monitor,
        log: ExperimentLog::default(),
    };
    match config.strategy {
        Strategy::Ce => t.run_phase(Phase::CrossEntropy, config.epochs, true)?,
        Strategy::SupContrLcp => {
            t.run_phase(Phase::Contrastive, config.epochs, false)?;
            t.run_phase(Phase::LinearProbe, config.probe_epochs, true)?;
        }
        Strategy::SupContrCe => {
            t.run_phase(Phase::Contrastive, config.epochs, false)?;
            t.run_phase(Phase::LinearProbe, config.probe_epochs, true)?;
            t.run_phase(Phase::CrossEntropy, config.epochs, true)?;
        }
    }
    Ok(TrainOutput {
        feature_map: t.phi,
        head: t.head,
        log: t.log,
    })
}
