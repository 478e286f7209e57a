//! Mixed-rank fine-tuning of a factorized model.
//!
//! Each factorized layer is routed, per forward pass, through either its
//! low-rank pair or its shadow sparse matrix according to a Bernoulli gate
//! whose probability decays linearly to zero. Every batch goes through two
//! independently gated passes tied together by a consistency loss.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::nn::{
    log_softmax, softmax, task_loss, with_batch, AdamW, BatchSampler, Dataset, Gradients, MlpModel, Task, TrainConfig,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixedRankConfig {
    pub p_init: f64,
    /// Per-step decay of the gate probability. `None` reaches zero at half the run.
    pub decay: Option<f64>,
    pub consistency_weight: f64,
    pub seed: u64,
}

impl Default for MixedRankConfig {
    fn default() -> Self {
        Self {
            p_init: 0.5,
            decay: None,
            consistency_weight: 1.0,
            seed: 0,
        }
    }
}

impl MixedRankConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_init) {
            return Err(Error::invalid(format!(
                "p_init must lie in [0, 1], got {}",
                self.p_init
            )));
        }
        if matches!(self.decay, Some(d) if !(d >= 0.0)) {
            return Err(Error::invalid("decay must be non-negative"));
        }
        if !(self.consistency_weight >= 0.0) {
            return Err(Error::invalid("consistency_weight must be non-negative"));
        }
        Ok(())
    }

    /// Decay actually used for a run of `total_steps` steps.
    pub fn decay_for(&self, total_steps: usize) -> f64 {
        self.decay.unwrap_or_else(|| {
            let half = (total_steps as f64 / 2.0).max(1.0);
            self.p_init / half
        })
    }
}

/// `max(0, p_init - d·t)`.
pub fn p_schedule(t: usize, p_init: f64, decay: f64) -> f64 {
    let p = p_init - decay * t as f64;
    // snap rounding residue at the crossing point to zero
    if p <= p_init * 1e-12 {
        0.0
    } else {
        p
    }
}

/// One binary gate per factorized layer; `true` selects the shadow sparse path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GateVector(pub Vec<bool>);

impl GateVector {
    pub fn sample<R: Rng + ?Sized>(n: usize, p: f64, rng: &mut R) -> Self {
        GateVector((0..n).map(|_| rng.gen::<f64>() < p).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub fn mixed_forward(model: &MlpModel, batch: &Matrix, z: &GateVector) -> Result<Matrix> {
    Ok(model.forward_cached(batch, Some(&z.0))?.logits)
}

/// Symmetric KL `½(KL(p1‖p2) + KL(p2‖p1))` between softmax outputs for
/// classification, mean squared difference for regression; averaged over the batch.
pub fn consistency_loss(y1: &Matrix, y2: &Matrix, task: Task) -> Result<f64> {
    Ok(consistency_loss_and_grads(y1, y2, task)?.0)
}

/// Consistency loss with its gradients with respect to both logit matrices.
pub fn consistency_loss_and_grads(y1: &Matrix, y2: &Matrix, task: Task) -> Result<(f64, Matrix, Matrix)> {
    if y1.shape() != y2.shape() {
        return Err(y1.shape_err("consistency_loss", y2));
    }
    let inv_b = 1.0 / y1.rows() as f64;
    match task {
        Task::Classification { .. } => {
            let (p1, p2) = (softmax(y1), softmax(y2));
            let (lp1, lp2) = (log_softmax(y1), log_softmax(y2));
            let mut loss = 0.0;
            let mut d1 = Matrix::zeros(y1.rows(), y1.cols());
            let mut d2 = Matrix::zeros(y1.rows(), y1.cols());
            for r in 0..y1.rows() {
                let a: Vec<f64> = lp1.row(r).iter().zip(lp2.row(r)).map(|(x, y)| x - y).collect();
                let (p1r, p2r) = (p1.row(r), p2.row(r));
                let mean1: f64 = p1r.iter().zip(&a).map(|(p, a)| p * a).sum();
                let mean2: f64 = p2r.iter().zip(&a).map(|(p, a)| p * a).sum();
                loss += p1r.iter().zip(p2r).zip(&a).map(|((x, y), a)| (x - y) * a).sum::<f64>();
                for c in 0..a.len() {
                    d1[(r, c)] = 0.5 * inv_b * (p1r[c] * (a[c] - mean1) + p1r[c] - p2r[c]);
                    d2[(r, c)] = 0.5 * inv_b * (p2r[c] * (mean2 - a[c]) + p2r[c] - p1r[c]);
                }
            }
            Ok((0.5 * loss * inv_b, d1, d2))
        }
        Task::Regression => {
            let diff = y1.sub(y2)?;
            let loss = diff.as_slice().iter().map(|d| d * d).sum::<f64>() * inv_b;
            let d1 = diff.scale(2.0 * inv_b);
            let d2 = d1.scale(-1.0);
            Ok((loss, d1, d2))
        }
    }
}

/// Per-step telemetry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedStep {
    pub step: usize,
    pub p: f64,
    pub task_loss_1: f64,
    pub task_loss_2: f64,
    pub consistency: f64,
}

/// Step-at-a-time mixed-rank fine-tuning.
#[derive(Debug, Clone)]
pub struct MixedRankTrainer {
    sampler: BatchSampler,
    opt: AdamW,
    gate_rng: ChaCha8Rng,
    p_init: f64,
    decay: f64,
    lambda: f64,
    step: usize,
}

impl MixedRankTrainer {
    pub fn new(model: &MlpModel, data: &Dataset, cfg: &MixedRankConfig, train_cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        train_cfg.validate()?;
        if model.factorized_layers().is_empty() {
            return Err(Error::invalid(
                "mixed-rank fine-tuning needs at least one factorized layer",
            ));
        }
        Ok(Self {
            sampler: BatchSampler::new(data.len(), train_cfg.batch_size, train_cfg.seed)?,
            opt: AdamW::new(train_cfg),
            gate_rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            p_init: cfg.p_init,
            decay: cfg.decay_for(train_cfg.total_steps),
            lambda: cfg.consistency_weight,
            step: 0,
        })
    }

    pub fn step(&mut self, model: &mut MlpModel, data: &Dataset) -> Result<MixedStep> {
        let n = model.factorized_layers().len();
        let p = p_schedule(self.step, self.p_init, self.decay);
        let z1 = GateVector::sample(n, p, &mut self.gate_rng);
        let z2 = GateVector::sample(n, p, &mut self.gate_rng);

        let (x, y) = data.select(self.sampler.next_batch());
        let c1 = model.forward_cached(&x, Some(&z1.0))?;
        let c2 = model.forward_cached(&x, Some(&z2.0))?;
        let (l1, d1) = task_loss(model.task, &c1.logits, &y)?;
        let (l2, d2) = task_loss(model.task, &c2.logits, &y)?;
        let mut d1 = d1.scale(0.5);
        let mut d2 = d2.scale(0.5);
        let mut lc = 0.0;
        if self.lambda > 0.0 {
            let (loss, g1, g2) = consistency_loss_and_grads(&c1.logits, &c2.logits, model.task)?;
            lc = loss;
            d1 = d1.add(&g1.scale(self.lambda))?;
            d2 = d2.add(&g2.scale(self.lambda))?;
        }
        if !(l1.is_finite() && l2.is_finite() && lc.is_finite()) {
            return Err(with_batch(Error::NonFiniteLoss { batch: 0 }, self.step));
        }
        let mut grads = Gradients::empty_for(model);
        model.backward(&c1, &d1, &mut grads)?;
        model.backward(&c2, &d2, &mut grads)?;
        self.opt.step(model, &grads)?;
        model.apply_masks();
        let record = MixedStep {
            step: self.step,
            p,
            task_loss_1: l1,
            task_loss_2: l2,
            consistency: lc,
        };
        self.step += 1;
        Ok(record)
    }
}

/// Runs `train_cfg.total_steps` mixed-rank steps on a copy of `model`.
pub fn mixed_rank_finetune(
    model: &MlpModel,
    data: &Dataset,
    cfg: &MixedRankConfig,
    train_cfg: &TrainConfig,
) -> Result<(MlpModel, Vec<MixedStep>)> {
    let mut model = model.clone();
    let mut trainer = MixedRankTrainer::new(&model, data, cfg, train_cfg)?;
    let log = (0..train_cfg.total_steps)
        .map(|_| trainer.step(&mut model, data))
        .collect::<Result<Vec<_>>>()?;
    Ok((model, log))
}
