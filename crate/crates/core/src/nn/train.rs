use serde::{Deserialize, Serialize};

use super::data::{BatchSampler, Dataset};
use super::model::{MlpModel, Targets, Task};
use super::optim::AdamW;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub total_steps: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 32,
            total_steps: 1000,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        if self.total_steps == 0 || self.batch_size == 0 {
            return Err(Error::invalid("total_steps and batch_size must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::invalid("adam betas must lie in [0, 1)"));
        }
        if !(self.eps > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::invalid("eps must be positive and weight_decay non-negative"));
        }
        Ok(())
    }
}

/// Step-at-a-time supervised training on the default forward path.
#[derive(Debug, Clone)]
pub struct Trainer {
    sampler: BatchSampler,
    opt: AdamW,
    step: usize,
}

impl Trainer {
    pub fn new(data: &Dataset, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            sampler: BatchSampler::new(data.len(), cfg.batch_size, cfg.seed)?,
            opt: AdamW::new(cfg),
            step: 0,
        })
    }

    /// One optimizer step; returns the batch loss.
    pub fn step(&mut self, model: &mut MlpModel, data: &Dataset) -> Result<f64> {
        let (x, y) = data.select(self.sampler.next_batch());
        let (loss, grads) = model.loss_and_grads(&x, &y).map_err(|e| with_batch(e, self.step))?;
        self.opt.step(model, &grads)?;
        model.apply_masks();
        self.step += 1;
        Ok(loss)
    }
}

/// Plain supervised training for `cfg.total_steps` steps. Returns per-step losses.
pub fn train(model: &mut MlpModel, data: &Dataset, cfg: &TrainConfig) -> Result<Vec<f64>> {
    let mut trainer = Trainer::new(data, cfg)?;
    (0..cfg.total_steps).map(|_| trainer.step(model, data)).collect()
}

pub(crate) fn with_batch(e: Error, step: usize) -> Error {
    match e {
        Error::NonFiniteLoss { .. } => Error::NonFiniteLoss { batch: step },
        other => other,
    }
}

/// Classification accuracy in `[0, 1]`, or mean squared error for regression.
pub fn evaluate(model: &MlpModel, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::invalid("cannot evaluate on an empty dataset"));
    }
    const CHUNK: usize = 512;
    let mut total = 0.0;
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(CHUNK) {
        let (x, y) = data.select(chunk);
        let logits = model.forward(&x)?;
        match (&y, model.task) {
            (Targets::Classes(labels), Task::Classification { .. }) => {
                total += labels
                    .iter()
                    .enumerate()
                    .filter(|&(r, &c)| argmax(logits.row(r)) == c)
                    .count() as f64;
            }
            (Targets::Values(values), Task::Regression) => {
                total += values
                    .iter()
                    .enumerate()
                    .map(|(r, t)| (logits[(r, 0)] - t).powi(2))
                    .sum::<f64>();
            }
            _ => return Err(Error::invalid("target kind does not match task")),
        }
    }
    Ok(total / data.len() as f64)
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
