use super::model::{Gradients, MlpModel};
use super::train::TrainConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u32,
}

/// AdamW with bias correction and decoupled weight decay.
///
/// Tensors whose gradient is `None` for a step are left untouched, including
/// their decay and step count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    state: Vec<Vec<Moments>>,
}

impl AdamW {
    pub fn new(cfg: &TrainConfig) -> Self {
        Self {
            learning_rate: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            weight_decay: cfg.weight_decay,
            state: Vec::new(),
        }
    }

    pub fn step(&mut self, model: &mut MlpModel, grads: &Gradients) -> Result<()> {
        if grads.slots.len() != model.layers.len() {
            return Err(Error::invalid("gradient layer count does not match model"));
        }
        if self.state.is_empty() {
            self.state = model
                .layers
                .iter()
                .map(|l| vec![Moments::default(); l.param_slot_count()])
                .collect();
        }
        for ((layer, layer_grads), layer_state) in model.layers.iter_mut().zip(&grads.slots).zip(self.state.iter_mut())
        {
            let params = layer.params_mut();
            if params.len() != layer_grads.len() || params.len() != layer_state.len() {
                return Err(Error::invalid("parameter slots changed under the optimizer"));
            }
            for (((param, decay), grad), st) in params.into_iter().zip(layer_grads).zip(layer_state) {
                let Some(grad) = grad else { continue };
                if grad.len() != param.len() {
                    return Err(Error::invalid("gradient length does not match parameter"));
                }
                if st.m.is_empty() {
                    st.m = vec![0.0; param.len()];
                    st.v = vec![0.0; param.len()];
                }
                st.step += 1;
                let bc1 = 1.0 - self.beta1.powi(st.step as i32);
                let bc2 = 1.0 - self.beta2.powi(st.step as i32);
                let decay = if decay {
                    self.learning_rate * self.weight_decay
                } else {
                    0.0
                };
                for i in 0..param.len() {
                    let g = grad[i];
                    st.m[i] = self.beta1 * st.m[i] + (1.0 - self.beta1) * g;
                    st.v[i] = self.beta2 * st.v[i] + (1.0 - self.beta2) * g * g;
                    let m_hat = st.m[i] / bc1;
                    let v_hat = st.v[i] / bc2;
                    param[i] -= decay * param[i];
                    param[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.eps);
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::nn::{LinearLayer, Task};

    fn scalar_model(w: f64) -> MlpModel {
        MlpModel::from_layers(
            vec![LinearLayer::dense(Matrix::from_rows(&[[w]]), vec![0.0]).unwrap()],
            Task::Regression,
        )
        .unwrap()
    }

    fn grads(g: f64) -> Gradients {
        Gradients {
            slots: vec![vec![Some(vec![g]), Some(vec![0.0])]],
        }
    }

    fn weight(m: &MlpModel) -> f64 {
        m.layers[0].effective_weight()[(0, 0)]
    }

    #[test]
    fn zero_gradient_no_decay_is_noop() {
        let cfg = TrainConfig {
            weight_decay: 0.0,
            ..TrainConfig::default()
        };
        let mut model = scalar_model(0.7);
        let mut opt = AdamW::new(&cfg);
        for _ in 0..5 {
            opt.step(&mut model, &grads(0.0)).unwrap();
        }
        assert_eq!(weight(&model), 0.7);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let cfg = TrainConfig {
            learning_rate: 0.1,
            weight_decay: 0.0,
            ..TrainConfig::default()
        };
        let mut model = scalar_model(0.0);
        AdamW::new(&cfg).step(&mut model, &grads(1.0)).unwrap();
        // m_hat = v_hat = 1
        assert!((weight(&model) + 0.1 / (1.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn decoupled_weight_decay() {
        let (lr, wd, w) = (0.1, 0.5, 2.0);
        let cfg = TrainConfig {
            learning_rate: lr,
            weight_decay: wd,
            ..TrainConfig::default()
        };
        let mut model = scalar_model(w);
        AdamW::new(&cfg).step(&mut model, &grads(0.0)).unwrap();
        assert!((weight(&model) - (w - lr * wd * w)).abs() < 1e-15);
    }

    #[test]
    fn missing_gradient_leaves_tensor_alone() {
        let cfg = TrainConfig {
            weight_decay: 0.1,
            ..TrainConfig::default()
        };
        let mut model = scalar_model(1.0);
        let g = Gradients {
            slots: vec![vec![None, Some(vec![1.0])]],
        };
        AdamW::new(&cfg).step(&mut model, &g).unwrap();
        assert_eq!(weight(&model), 1.0);
        assert!(model.layers[0].bias[0] < 0.0);
    }
}
