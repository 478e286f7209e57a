use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layer::{LayerKind, LinearLayer};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Classification { num_classes: usize },
    Regression,
}

impl Task {
    pub fn output_width(&self) -> usize {
        match self {
            Task::Classification { num_classes } => *num_classes,
            Task::Regression => 1,
        }
    }
}

/// Targets for a batch or dataset.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Classes(Vec<usize>),
    Values(Vec<f64>),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Classes(c) => c.len(),
            Targets::Values(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, idx: &[usize]) -> Targets {
        match self {
            Targets::Classes(c) => Targets::Classes(idx.iter().map(|&i| c[i]).collect()),
            Targets::Values(v) => Targets::Values(idx.iter().map(|&i| v[i]).collect()),
        }
    }
}

/// Feed-forward network: linear layers with ReLU between them and identity after the last.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub layers: Vec<LinearLayer>,
    pub task: Task,
}

/// Activations recorded by a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to each layer; `inputs[l + 1]` is the ReLU output of layer `l`.
    inputs: Vec<Matrix>,
    /// `x Bᵀ` for factorized layers that took the low-rank path.
    mids: Vec<Option<Matrix>>,
    /// Whether each layer ran on its shadow sparse weight.
    shadow_path: Vec<bool>,
    pub logits: Matrix,
}

/// Per-tensor gradients in the canonical slot order of [`LinearLayer::params_mut`].
/// `None` marks a tensor that took no part in the forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub slots: Vec<Vec<Option<Vec<f64>>>>,
}

impl Gradients {
    pub fn empty_for(model: &MlpModel) -> Self {
        Self {
            slots: model.layers.iter().map(|l| vec![None; l.param_slot_count()]).collect(),
        }
    }

    fn accumulate(&mut self, layer: usize, slot: usize, g: Vec<f64>) {
        match &mut self.slots[layer][slot] {
            Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
            empty => *empty = Some(g),
        }
    }

    /// Gradient of the layer's primary weight (`W`, or the shadow for factorized layers).
    pub fn weight(&self, layer: usize) -> Option<&[f64]> {
        let slot = if self.slots[layer].len() == 4 { 2 } else { 0 };
        self.slots[layer][slot].as_deref()
    }

    pub fn bias(&self, layer: usize) -> Option<&[f64]> {
        self.slots[layer].last().and_then(|s| s.as_deref())
    }

    /// Gradients of the factor pair `(a, b)` of a factorized layer.
    pub fn factors(&self, layer: usize) -> (Option<&[f64]>, Option<&[f64]>) {
        let s = &self.slots[layer];
        if s.len() == 4 {
            (s[0].as_deref(), s[1].as_deref())
        } else {
            (None, None)
        }
    }
}

impl MlpModel {
    /// He-normal initialised dense model with the given layer widths, e.g. `[64, 256, 256, 10]`.
    pub fn new<R: Rng + ?Sized>(dims: &[usize], task: Task, rng: &mut R) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::invalid("model needs at least input and output widths"));
        }
        if *dims.last().unwrap() != task.output_width() {
            return Err(Error::invalid(format!(
                "output width {} does not match task width {}",
                dims.last().unwrap(),
                task.output_width()
            )));
        }
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let gain = if i + 2 < dims.len() { 2.0 } else { 1.0 };
                let std = (gain / w[0] as f64).sqrt();
                LinearLayer::dense(Matrix::random_normal(w[1], w[0], std, rng), vec![0.0; w[1]])
            })
            .collect::<Result<_>>()?;
        Self::from_layers(layers, task)
    }

    pub fn from_layers(layers: Vec<LinearLayer>, task: Task) -> Result<Self> {
        let model = Self { layers, task };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::invalid("model has no layers"));
        }
        for (i, l) in self.layers.iter().enumerate() {
            l.validate().map_err(|e| Error::invalid(format!("layer {i}: {e}")))?;
        }
        for (i, pair) in self.layers.windows(2).enumerate() {
            if pair[0].shape().0 != pair[1].shape().1 {
                return Err(Error::invalid(format!(
                    "layer {i} outputs {} but layer {} expects {}",
                    pair[0].shape().0,
                    i + 1,
                    pair[1].shape().1
                )));
            }
        }
        let out = self.layers.last().unwrap().shape().0;
        if out != self.task.output_width() {
            return Err(Error::invalid(format!(
                "model outputs {out} values, task expects {}",
                self.task.output_width()
            )));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].shape().1
    }

    /// Layer widths `[in, h1, ..., out]`.
    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.input_dim()];
        d.extend(self.layers.iter().map(|l| l.shape().0));
        d
    }

    /// Indices of factorized layers, in order; gate vectors are indexed by position in this list.
    pub fn factorized_layers(&self) -> Vec<usize> {
        (0..self.layers.len())
            .filter(|&i| self.layers[i].is_factorized())
            .collect()
    }

    pub fn forward(&self, batch: &Matrix) -> Result<Matrix> {
        Ok(self.forward_cached(batch, None)?.logits)
    }

    /// Forward pass that records activations for [`MlpModel::backward`].
    ///
    /// `gates[i] == true` routes the `i`-th factorized layer through its
    /// shadow sparse matrix instead of its factor pair.
    pub fn forward_cached(&self, batch: &Matrix, gates: Option<&[bool]>) -> Result<ForwardCache> {
        if batch.cols() != self.input_dim() {
            return Err(Error::Shape {
                op: "forward",
                left: batch.shape(),
                right: self.layers[0].shape(),
            });
        }
        let n_fact = self.layers.iter().filter(|l| l.is_factorized()).count();
        if let Some(g) = gates {
            if g.len() != n_fact {
                return Err(Error::invalid(format!(
                    "gate vector has {} entries for {n_fact} factorized layers",
                    g.len()
                )));
            }
        }
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut mids = Vec::with_capacity(self.layers.len());
        let mut shadow_path = Vec::with_capacity(self.layers.len());
        let mut x = batch.clone();
        let mut fact_idx = 0;
        for (l, layer) in self.layers.iter().enumerate() {
            let (mut y, mid, shadow) = match &layer.kind {
                LayerKind::Dense { weight } => (x.matmul_t(weight)?, None, false),
                LayerKind::Sparse { weight, state } => (x.matmul_t(&weight.hadamard(&state.mask)?)?, None, false),
                LayerKind::Factorized {
                    pair,
                    shadow,
                    shadow_mask,
                } => {
                    let use_shadow = gates.is_some_and(|g| g[fact_idx]);
                    fact_idx += 1;
                    if use_shadow {
                        (x.matmul_t(&shadow.hadamard(shadow_mask)?)?, None, true)
                    } else {
                        let h = x.matmul_t(pair.b())?;
                        (h.matmul_t(pair.a())?, Some(h), false)
                    }
                }
            };
            add_bias(&mut y, &layer.bias);
            if l < last {
                y.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
            }
            inputs.push(std::mem::replace(&mut x, y));
            mids.push(mid);
            shadow_path.push(shadow);
        }
        Ok(ForwardCache {
            inputs,
            mids,
            shadow_path,
            logits: x,
        })
    }

    /// Backpropagates `d_logits` through the recorded pass, adding into `grads`.
    ///
    /// Sparse layers use the straight-through rule: the weight gradient is
    /// taken as if the mask were absent.
    pub fn backward(&self, cache: &ForwardCache, d_logits: &Matrix, grads: &mut Gradients) -> Result<()> {
        if d_logits.shape() != cache.logits.shape() {
            return Err(d_logits.shape_err("backward", &cache.logits));
        }
        let mut dy = d_logits.clone();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let x = &cache.inputs[l];
            grads.accumulate(l, layer.param_slot_count() - 1, column_sums(&dy));
            let need_dx = l > 0;
            let dx = match &layer.kind {
                LayerKind::Dense { weight } => {
                    grads.accumulate(l, 0, dy.t_matmul(x)?.into_vec());
                    need_dx.then(|| dy.matmul(weight)).transpose()?
                }
                LayerKind::Sparse { weight, state } => {
                    grads.accumulate(l, 0, dy.t_matmul(x)?.into_vec());
                    need_dx.then(|| dy.matmul(&weight.hadamard(&state.mask)?)).transpose()?
                }
                LayerKind::Factorized {
                    pair,
                    shadow,
                    shadow_mask,
                } => {
                    if cache.shadow_path[l] {
                        grads.accumulate(l, 2, dy.t_matmul(x)?.into_vec());
                        need_dx.then(|| dy.matmul(&shadow.hadamard(shadow_mask)?)).transpose()?
                    } else {
                        let h = cache.mids[l].as_ref().expect("low-rank path records x Bᵀ");
                        grads.accumulate(l, 0, dy.t_matmul(h)?.into_vec());
                        let dh = dy.matmul(pair.a())?;
                        grads.accumulate(l, 1, dh.t_matmul(x)?.into_vec());
                        need_dx.then(|| dh.matmul(pair.b())).transpose()?
                    }
                }
            };
            if let Some(mut dx) = dx {
                for (g, &a) in dx.as_mut_slice().iter_mut().zip(x.as_slice()) {
                    if a <= 0.0 {
                        *g = 0.0;
                    }
                }
                dy = dx;
            }
        }
        Ok(())
    }

    /// Mean task loss and its gradients on one batch, default (non-shadow) path.
    pub fn loss_and_grads(&self, batch: &Matrix, targets: &Targets) -> Result<(f64, Gradients)> {
        let cache = self.forward_cached(batch, None)?;
        let (loss, d) = task_loss(self.task, &cache.logits, targets)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { batch: 0 });
        }
        let mut grads = Gradients::empty_for(self);
        self.backward(&cache, &d, &mut grads)?;
        Ok((loss, grads))
    }

    pub fn apply_masks(&mut self) {
        self.layers.iter_mut().for_each(LinearLayer::apply_mask);
    }
}

fn add_bias(y: &mut Matrix, bias: &[f64]) {
    for r in 0..y.rows() {
        y.row_mut(r).iter_mut().zip(bias).for_each(|(v, b)| *v += b);
    }
}

fn column_sums(m: &Matrix) -> Vec<f64> {
    let mut s = vec![0.0; m.cols()];
    for r in 0..m.rows() {
        s.iter_mut().zip(m.row(r)).for_each(|(a, b)| *a += b);
    }
    s
}

/// Row-wise softmax.
pub fn softmax(logits: &Matrix) -> Matrix {
    let mut p = logits.clone();
    for r in 0..p.rows() {
        let row = p.row_mut(r);
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    p
}

/// Row-wise log-softmax.
pub fn log_softmax(logits: &Matrix) -> Matrix {
    let mut p = logits.clone();
    for r in 0..p.rows() {
        let row = p.row_mut(r);
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        row.iter_mut().for_each(|v| *v -= lse);
    }
    p
}

/// Mean cross-entropy (classification) or mean squared error (regression),
/// with the gradient with respect to the logits.
pub fn task_loss(task: Task, logits: &Matrix, targets: &Targets) -> Result<(f64, Matrix)> {
    let b = logits.rows();
    if targets.len() != b {
        return Err(Error::invalid(format!("{} targets for a batch of {b}", targets.len())));
    }
    let inv_b = 1.0 / b as f64;
    match (task, targets) {
        (Task::Classification { num_classes }, Targets::Classes(classes)) => {
            let logp = log_softmax(logits);
            let mut d = softmax(logits);
            let mut loss = 0.0;
            for (r, &c) in classes.iter().enumerate() {
                if c >= num_classes {
                    return Err(Error::invalid(format!("class id {c} >= {num_classes}")));
                }
                loss -= logp[(r, c)];
                d[(r, c)] -= 1.0;
            }
            d.as_mut_slice().iter_mut().for_each(|v| *v *= inv_b);
            Ok((loss * inv_b, d))
        }
        (Task::Regression, Targets::Values(values)) => {
            let mut d = Matrix::zeros(b, 1);
            let mut loss = 0.0;
            for (r, &t) in values.iter().enumerate() {
                let diff = logits[(r, 0)] - t;
                loss += diff * diff;
                d[(r, 0)] = 2.0 * diff * inv_b;
            }
            Ok((loss * inv_b, d))
        }
        _ => Err(Error::invalid("target kind does not match task")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prune::{PruneMethod, PruneState};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sparse_layer(weight: Matrix, mask: Matrix, bias: Vec<f64>) -> LinearLayer {
        let score = Matrix::zeros(weight.rows(), weight.cols());
        let mut weight = weight;
        crate::nn::zero_masked(&mut weight, &mask);
        LinearLayer {
            kind: LayerKind::Sparse {
                weight,
                state: PruneState {
                    score,
                    mask,
                    method: PruneMethod::FirstOrder,
                },
            },
            bias,
        }
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let layer = LinearLayer::dense(Matrix::identity(3), vec![0.0; 3]).unwrap();
        let model = MlpModel::from_layers(vec![layer], Task::Classification { num_classes: 3 }).unwrap();
        let x = Matrix::from_rows(&[[1.0, -2.0, 0.5]]);
        assert_eq!(model.forward(&x).unwrap(), x);
    }

    #[test]
    fn all_zero_mask_gives_bias() {
        let layer = sparse_layer(Matrix::filled(2, 3, 5.0), Matrix::zeros(2, 3), vec![0.25, -1.0]);
        let model = MlpModel::from_layers(vec![layer], Task::Classification { num_classes: 2 }).unwrap();
        let x = Matrix::from_rows(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]);
        assert_eq!(
            model.forward(&x).unwrap(),
            Matrix::from_rows(&[[0.25, -1.0], [0.25, -1.0]])
        );
    }

    #[test]
    fn two_layer_hand_evaluation() {
        // h = relu([[1,-1],[2,0.5]] x + [0, -1]); y = [1, -2] h + 0.5
        let l1 = LinearLayer::dense(Matrix::from_rows(&[[1.0, -1.0], [2.0, 0.5]]), vec![0.0, -1.0]).unwrap();
        let l2 = LinearLayer::dense(Matrix::from_rows(&[[1.0, -2.0]]), vec![0.5]).unwrap();
        let model = MlpModel::from_layers(vec![l1, l2], Task::Regression).unwrap();
        let x = Matrix::from_rows(&[[3.0, 1.0]]);
        // h = relu([2, 5.5]) = [2, 5.5]; y = 2 - 11 + 0.5
        assert_eq!(model.forward(&x).unwrap()[(0, 0)], -8.5);
        let x = Matrix::from_rows(&[[-1.0, 1.0]]);
        // h = relu([-2, -2.5]) = 0; y = 0.5
        assert_eq!(model.forward(&x).unwrap()[(0, 0)], 0.5);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let model = MlpModel::new(&[4, 3, 2], Task::Classification { num_classes: 2 }, &mut rng).unwrap();
        assert!(model.forward(&Matrix::zeros(1, 5)).is_err());
        assert!(MlpModel::new(&[4, 3, 3], Task::Classification { num_classes: 2 }, &mut rng).is_err());
    }

    #[test]
    fn confident_correct_logits_have_no_loss() {
        let logits = Matrix::from_rows(&[[100.0, -100.0], [-100.0, 100.0]]);
        let (loss, d) = task_loss(
            Task::Classification { num_classes: 2 },
            &logits,
            &Targets::Classes(vec![0, 1]),
        )
        .unwrap();
        assert!(loss < 1e-12);
        assert!(d.max_abs() < 1e-12);
    }

    #[test]
    fn scalar_mse_gradient() {
        let (w, x, t) = (1.5, 2.0, 1.0);
        let layer = LinearLayer::dense(Matrix::from_rows(&[[w]]), vec![0.0]).unwrap();
        let model = MlpModel::from_layers(vec![layer], Task::Regression).unwrap();
        let (loss, g) = model
            .loss_and_grads(&Matrix::from_rows(&[[x]]), &Targets::Values(vec![t]))
            .unwrap();
        assert_eq!(loss, (w * x - t).powi(2));
        assert_eq!(g.weight(0).unwrap()[0], 2.0 * (w * x - t) * x);
    }

    #[test]
    fn masked_entry_does_not_affect_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w = Matrix::random_normal(3, 4, 1.0, &mut rng);
        let mut mask = Matrix::filled(3, 4, 1.0);
        mask[(1, 2)] = 0.0;
        let layer = sparse_layer(w, mask, vec![0.1, 0.2, 0.3]);
        let mut model = MlpModel::from_layers(vec![layer], Task::Classification { num_classes: 3 }).unwrap();
        let x = Matrix::random_normal(5, 4, 1.0, &mut rng);
        let before = model.forward(&x).unwrap();
        if let LayerKind::Sparse { weight, .. } = &mut model.layers[0].kind {
            weight[(1, 2)] = 42.0;
        }
        assert_eq!(model.forward(&x).unwrap(), before);
    }

    #[test]
    fn gate_length_checked() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let model = MlpModel::new(&[4, 3, 2], Task::Classification { num_classes: 2 }, &mut rng).unwrap();
        assert!(model.forward_cached(&Matrix::zeros(1, 4), Some(&[true])).is_err());
        assert!(model.forward_cached(&Matrix::zeros(1, 4), Some(&[])).is_ok());
    }
}
