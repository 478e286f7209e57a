//! Unstructured pruning: magnitude and first-order importance scores, top-v
//! masking, and the cubic sparsity schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{numerical_rank, Matrix, DEFAULT_RANK_TOL};
use crate::nn::{with_batch, AdamW, BatchSampler, Dataset, LayerKind, MlpModel, TrainConfig};

/// Re-apply the mask every this many optimizer steps.
pub const DEFAULT_PRUNE_INTERVAL: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PruneMethod {
    /// Importance is `|W|`, recomputed at every pruning event.
    ZeroOrder,
    /// Importance is `-Σ_t g_t ⊙ W_t`, accumulated every step.
    FirstOrder,
}

impl PruneMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            PruneMethod::ZeroOrder => "zero_order",
            PruneMethod::FirstOrder => "first_order",
        }
    }
}

/// Importance scores and binary mask of one weight matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PruneState {
    pub score: Matrix,
    pub mask: Matrix,
    pub method: PruneMethod,
}

impl PruneState {
    /// All-kept mask. First-order scores start at zero, zero-order ones at `|W|`.
    pub fn new(weight: &Matrix, method: PruneMethod) -> Self {
        let score = match method {
            PruneMethod::ZeroOrder => magnitude_scores(weight),
            PruneMethod::FirstOrder => Matrix::zeros(weight.rows(), weight.cols()),
        };
        Self {
            score,
            mask: Matrix::filled(weight.rows(), weight.cols(), 1.0),
            method,
        }
    }

    pub fn kept(&self) -> usize {
        self.mask.count_nonzero()
    }
}

/// Cubic decay of the kept fraction from `1.0` to `v_final`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SparsitySchedule {
    pub v_final: f64,
    pub warmup_steps: usize,
    pub cooldown_steps: usize,
    pub total_steps: usize,
}

impl SparsitySchedule {
    pub const V_INITIAL: f64 = 1.0;

    pub fn new(v_final: f64, warmup_steps: usize, cooldown_steps: usize, total_steps: usize) -> Result<Self> {
        let s = Self {
            v_final,
            warmup_steps,
            cooldown_steps,
            total_steps,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.v_final > 0.0 && self.v_final <= Self::V_INITIAL) {
            return Err(Error::invalid(format!(
                "kept fraction must be positive and at most 1, got {}",
                self.v_final
            )));
        }
        if self.warmup_steps + self.cooldown_steps >= self.total_steps {
            return Err(Error::invalid(format!(
                "warmup {} + cooldown {} must be below total steps {}",
                self.warmup_steps, self.cooldown_steps, self.total_steps
            )));
        }
        Ok(())
    }

    /// Kept fraction at step `t`.
    pub fn v_at(&self, t: usize) -> Result<f64> {
        schedule_v(t, self)
    }
}

/// `v_i` before warmup, `v_f + (v_i - v_f)((T - t_f - t)/(T - t_f - t_i))³` during
/// the ramp, `v_f` from `T - t_f` on.
pub fn schedule_v(t: usize, s: &SparsitySchedule) -> Result<f64> {
    if t > s.total_steps {
        return Err(Error::invalid(format!("step {t} beyond total {}", s.total_steps)));
    }
    let vi = SparsitySchedule::V_INITIAL;
    let ramp_end = s.total_steps - s.cooldown_steps;
    Ok(if t < s.warmup_steps {
        vi
    } else if t < ramp_end {
        let frac = (ramp_end - t) as f64 / (ramp_end - s.warmup_steps) as f64;
        s.v_final + (vi - s.v_final) * frac.powi(3)
    } else {
        s.v_final
    })
}

pub fn magnitude_scores(weight: &Matrix) -> Matrix {
    weight.map(f64::abs)
}

/// `score -= grad ⊙ weight`, using the weight before this step's update.
pub fn accumulate_first_order(state: &mut PruneState, weight: &Matrix, grad: &[f64]) -> Result<()> {
    if weight.shape() != state.score.shape() || grad.len() != weight.len() {
        return Err(Error::Shape {
            op: "accumulate_first_order",
            left: state.score.shape(),
            right: weight.shape(),
        });
    }
    for ((s, &w), &g) in state.score.as_mut_slice().iter_mut().zip(weight.as_slice()).zip(grad) {
        *s -= g * w;
    }
    Ok(())
}

/// `⌈v · len⌉`, with a small guard so products like `0.7 * 10` don't round up.
pub fn kept_count(len: usize, v: f64) -> usize {
    let raw = (v * len as f64 - 1e-9).ceil();
    (raw.max(1.0) as usize).min(len)
}

/// Keeps the `⌈v·n·m⌉` highest-scoring entries and zeroes the rest of `weight`.
///
/// Ties go to the smaller row-major index.
pub fn prune_to(state: &mut PruneState, weight: &mut Matrix, v: f64) -> Result<()> {
    if !(v > 0.0 && v <= 1.0) {
        return Err(Error::invalid(format!("kept fraction must lie in (0, 1], got {v}")));
    }
    if weight.shape() != state.score.shape() {
        return Err(weight.shape_err("prune_to", &state.score));
    }
    let len = weight.len();
    let keep = kept_count(len, v);
    let scores = state.score.as_slice();
    let mut idx: Vec<usize> = (0..len).collect();
    let order = |&a: &usize, &b: &usize| scores[b].total_cmp(&scores[a]).then(a.cmp(&b));
    if keep < len {
        idx.select_nth_unstable_by(keep, order);
    }
    let mask = state.mask.as_mut_slice();
    mask.iter_mut().for_each(|m| *m = 0.0);
    for &i in &idx[..keep] {
        mask[i] = 1.0;
    }
    crate::nn::zero_masked(weight, &state.mask);
    Ok(())
}

/// One pruning event for the telemetry log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneEvent {
    pub step: usize,
    pub layer: usize,
    pub v_t: f64,
    pub nonzeros: usize,
    pub numerical_rank: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PruneOptions {
    pub method: PruneMethod,
    /// Layers to prune; the rest train densely.
    pub layers: Vec<usize>,
    pub interval: usize,
    /// Record a telemetry row per layer per event; `with_rank` adds an SVD per row.
    pub telemetry: bool,
    pub telemetry_rank: bool,
}

impl PruneOptions {
    pub fn new(method: PruneMethod, layers: Vec<usize>) -> Self {
        Self {
            method,
            layers,
            interval: DEFAULT_PRUNE_INTERVAL,
            telemetry: false,
            telemetry_rank: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PruneOutcome {
    pub model: MlpModel,
    pub losses: Vec<f64>,
    pub events: Vec<PruneEvent>,
}

/// Converts the listed dense layers to sparse ones with an all-kept mask.
pub fn sparsify(model: &mut MlpModel, layers: &[usize], method: PruneMethod) -> Result<()> {
    for &l in layers {
        let layer = model
            .layers
            .get_mut(l)
            .ok_or_else(|| Error::invalid(format!("layer {l} does not exist")))?;
        match &layer.kind {
            LayerKind::Dense { weight } => {
                let state = PruneState::new(weight, method);
                let weight = weight.clone();
                layer.kind = LayerKind::Sparse { weight, state };
            }
            LayerKind::Sparse { state, .. } if state.method == method => {}
            LayerKind::Sparse { .. } => {
                return Err(Error::invalid(format!("layer {l} was pruned with a different method")))
            }
            LayerKind::Factorized { .. } => return Err(Error::invalid(format!("layer {l} is already factorized"))),
        }
    }
    Ok(())
}

/// Trains while pruning: per step the order is score update, mask (every
/// `interval` steps), optimizer step. A final mask at `v_final` is applied
/// after the last step.
pub fn run_pruning(
    model: &MlpModel,
    data: &Dataset,
    schedule: &SparsitySchedule,
    train_cfg: &TrainConfig,
    opts: &PruneOptions,
) -> Result<PruneOutcome> {
    schedule.validate()?;
    train_cfg.validate()?;
    if train_cfg.total_steps != schedule.total_steps {
        return Err(Error::invalid(format!(
            "training runs {} steps but the schedule spans {}",
            train_cfg.total_steps, schedule.total_steps
        )));
    }
    if opts.interval == 0 {
        return Err(Error::invalid("prune interval must be at least 1"));
    }
    let mut model = model.clone();
    sparsify(&mut model, &opts.layers, opts.method)?;

    let mut sampler = BatchSampler::new(data.len(), train_cfg.batch_size, train_cfg.seed)?;
    let mut opt = AdamW::new(train_cfg);
    let mut losses = Vec::with_capacity(schedule.total_steps);
    let mut events = Vec::new();

    for step in 0..schedule.total_steps {
        let (x, y) = data.select(sampler.next_batch());
        let (loss, grads) = model.loss_and_grads(&x, &y).map_err(|e| with_batch(e, step))?;
        losses.push(loss);
        if opts.method == PruneMethod::FirstOrder {
            for &l in &opts.layers {
                if let LayerKind::Sparse { weight, state } = &mut model.layers[l].kind {
                    let g = grads.weight(l).expect("sparse layers always receive a gradient");
                    accumulate_first_order(state, weight, g)?;
                }
            }
        }
        if step % opts.interval == 0 {
            let v = schedule_v(step, schedule)?;
            prune_event(&mut model, opts, step, v, &mut events)?;
        }
        opt.step(&mut model, &grads)?;
        model.apply_masks();
    }
    prune_event(&mut model, opts, schedule.total_steps, schedule.v_final, &mut events)?;
    Ok(PruneOutcome { model, losses, events })
}

fn prune_event(
    model: &mut MlpModel,
    opts: &PruneOptions,
    step: usize,
    v: f64,
    events: &mut Vec<PruneEvent>,
) -> Result<()> {
    for &l in &opts.layers {
        if let LayerKind::Sparse { weight, state } = &mut model.layers[l].kind {
            if state.method == PruneMethod::ZeroOrder {
                state.score = magnitude_scores(weight);
            }
            prune_to(state, weight, v)?;
            if opts.telemetry {
                events.push(PruneEvent {
                    step,
                    layer: l,
                    v_t: v,
                    nonzeros: weight.count_nonzero(),
                    numerical_rank: if opts.telemetry_rank {
                        Some(numerical_rank(weight, DEFAULT_RANK_TOL)?)
                    } else {
                        None
                    },
                });
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sched(v_f: f64, ti: usize, tf: usize, t: usize) -> SparsitySchedule {
        SparsitySchedule::new(v_f, ti, tf, t).unwrap()
    }

    #[test]
    fn schedule_examples() {
        let s = sched(0.1, 0, 0, 100);
        assert_eq!(schedule_v(0, &s).unwrap(), 1.0);
        assert!((schedule_v(50, &s).unwrap() - 0.2125).abs() < 1e-15);
        assert_eq!(schedule_v(100, &s).unwrap(), 0.1);
        assert!(schedule_v(101, &s).is_err());

        let s = sched(0.25, 10, 20, 100);
        assert_eq!(schedule_v(9, &s).unwrap(), 1.0);
        assert_eq!(schedule_v(10, &s).unwrap(), 1.0);
        assert_eq!(schedule_v(80, &s).unwrap(), 0.25);
        assert_eq!(schedule_v(95, &s).unwrap(), 0.25);
    }

    #[test]
    fn schedule_rejects_bad_params() {
        assert!(SparsitySchedule::new(0.0, 0, 0, 10).is_err());
        assert!(SparsitySchedule::new(1.5, 0, 0, 10).is_err());
        assert!(SparsitySchedule::new(0.5, 5, 5, 10).is_err());
    }

    #[test]
    fn magnitude_examples() {
        let w = Matrix::from_rows(&[[-2.0, 1.0]]);
        assert_eq!(magnitude_scores(&w), Matrix::from_rows(&[[2.0, 1.0]]));
        assert_eq!(magnitude_scores(&Matrix::zeros(2, 2)), Matrix::zeros(2, 2));
        assert_eq!(magnitude_scores(&w.scale(-1.0)), magnitude_scores(&w));
    }

    fn state_for(w: &Matrix) -> PruneState {
        PruneState::new(w, PruneMethod::FirstOrder)
    }

    #[test]
    fn first_order_accumulation() {
        let w = Matrix::from_rows(&[[2.0]]);
        let mut st = state_for(&w);
        accumulate_first_order(&mut st, &w, &[0.5]).unwrap();
        assert_eq!(st.score[(0, 0)], -1.0);

        // weight moving away from zero: g and w of opposite sign
        let mut st = state_for(&w);
        accumulate_first_order(&mut st, &w, &[-0.3]).unwrap();
        assert!(st.score[(0, 0)] > 0.0);

        let mut st = state_for(&w);
        accumulate_first_order(&mut st, &Matrix::from_rows(&[[1.0]]), &[1.0]).unwrap();
        accumulate_first_order(&mut st, &Matrix::from_rows(&[[0.5]]), &[-2.0]).unwrap();
        assert_eq!(st.score[(0, 0)], 0.0);

        assert!(accumulate_first_order(&mut st, &Matrix::zeros(1, 2), &[0.0, 0.0]).is_err());
    }

    #[test]
    fn prune_to_examples() {
        let mut w = Matrix::from_rows(&[[1.0, 2.0, 3.0, 4.0]]);
        let mut st = state_for(&w);
        st.score = Matrix::from_rows(&[[4.0, 3.0, 2.0, 1.0]]);
        prune_to(&mut st, &mut w, 0.5).unwrap();
        assert_eq!(st.mask, Matrix::from_rows(&[[1.0, 1.0, 0.0, 0.0]]));
        assert_eq!(w, Matrix::from_rows(&[[1.0, 2.0, 0.0, 0.0]]));

        let mut w = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]);
        let orig = w.clone();
        let mut st = state_for(&w);
        prune_to(&mut st, &mut w, 1.0).unwrap();
        assert_eq!(st.mask, Matrix::filled(2, 2, 1.0));
        assert_eq!(w, orig);

        // all scores equal: lowest flat indices win
        prune_to(&mut st, &mut w, 0.5).unwrap();
        assert_eq!(st.mask, Matrix::from_rows(&[[1.0, 1.0], [0.0, 0.0]]));
        assert!(prune_to(&mut st, &mut w, 0.0).is_err());
    }

    #[test]
    fn regrown_entry_stays_zero() {
        let mut w = Matrix::from_rows(&[[1.0, 2.0]]);
        let mut st = state_for(&w);
        st.score = Matrix::from_rows(&[[1.0, 0.0]]);
        prune_to(&mut st, &mut w, 0.5).unwrap();
        st.score = Matrix::from_rows(&[[0.0, 1.0]]);
        prune_to(&mut st, &mut w, 0.5).unwrap();
        assert_eq!(st.mask, Matrix::from_rows(&[[0.0, 1.0]]));
        assert_eq!(w, Matrix::zeros(1, 2));
    }

    #[test]
    fn kept_count_rounding() {
        assert_eq!(kept_count(10, 0.7), 7);
        assert_eq!(kept_count(65536, 0.1), 6554);
        assert_eq!(kept_count(4, 0.5), 2);
        assert_eq!(kept_count(3, 0.01), 1);
    }
}
