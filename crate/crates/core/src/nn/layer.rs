use crate::error::{Error, Result};
use crate::linalg::{FactorPair, Matrix};
use crate::prune::PruneState;

/// How a linear layer stores its weight.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerKind {
    Dense {
        weight: Matrix,
    },
    /// Unstructured-sparse weight. `weight` is zero wherever `state.mask` is zero.
    Sparse {
        weight: Matrix,
        state: PruneState,
    },
    /// Low-rank pair plus the sparse matrix it was factorized from.
    Factorized {
        pair: FactorPair,
        shadow: Matrix,
        shadow_mask: Matrix,
    },
}

/// `y = x Wᵀ + b` with `W` of shape `(out, in)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearLayer {
    pub kind: LayerKind,
    pub bias: Vec<f64>,
}

impl LinearLayer {
    pub fn dense(weight: Matrix, bias: Vec<f64>) -> Result<Self> {
        let layer = Self {
            kind: LayerKind::Dense { weight },
            bias,
        };
        layer.validate()?;
        Ok(layer)
    }

    pub fn validate(&self) -> Result<()> {
        let (out, inp) = self.shape();
        if out == 0 || inp == 0 {
            return Err(Error::invalid("layer with zero dimension"));
        }
        if self.bias.len() != out {
            return Err(Error::invalid(format!(
                "bias length {} does not match {out} outputs",
                self.bias.len()
            )));
        }
        let check = |m: &Matrix, what: &str| -> Result<()> {
            if m.shape() != (out, inp) {
                return Err(Error::invalid(format!(
                    "{what} has shape {:?}, expected {:?}",
                    m.shape(),
                    (out, inp)
                )));
            }
            Ok(())
        };
        match &self.kind {
            LayerKind::Dense { .. } => {}
            LayerKind::Sparse { weight, state } => {
                let mask = &state.mask;
                check(mask, "mask")?;
                check(&state.score, "score")?;
                check_binary(mask)?;
                let leaked = weight
                    .as_slice()
                    .iter()
                    .zip(mask.as_slice())
                    .any(|(&w, &m)| m == 0.0 && w != 0.0);
                if leaked {
                    return Err(Error::invalid("sparse weight is nonzero under a zero mask"));
                }
            }
            LayerKind::Factorized {
                shadow, shadow_mask, ..
            } => {
                check(shadow, "shadow")?;
                check(shadow_mask, "shadow mask")?;
                check_binary(shadow_mask)?;
            }
        }
        Ok(())
    }

    /// `(out, in)`.
    pub fn shape(&self) -> (usize, usize) {
        match &self.kind {
            LayerKind::Dense { weight } | LayerKind::Sparse { weight, .. } => weight.shape(),
            LayerKind::Factorized { pair, .. } => pair.shape(),
        }
    }

    pub fn is_factorized(&self) -> bool {
        matches!(self.kind, LayerKind::Factorized { .. })
    }

    /// The weight matrix the layer applies on its default path.
    pub fn effective_weight(&self) -> Matrix {
        match &self.kind {
            LayerKind::Dense { weight } => weight.clone(),
            LayerKind::Sparse { weight, state } => weight.hadamard(&state.mask).expect("shapes validated"),
            LayerKind::Factorized { pair, .. } => pair.product(),
        }
    }

    /// Trainable tensors in canonical order: `[weight, bias]` for dense and
    /// sparse layers, `[a, b, shadow, bias]` for factorized ones. The flag
    /// marks tensors that receive weight decay.
    pub fn params_mut(&mut self) -> Vec<(&mut [f64], bool)> {
        let bias = (self.bias.as_mut_slice(), false);
        match &mut self.kind {
            LayerKind::Dense { weight } | LayerKind::Sparse { weight, .. } => {
                vec![(weight.as_mut_slice(), true), bias]
            }
            LayerKind::Factorized { pair, shadow, .. } => {
                let (a, b) = pair.parts_mut();
                vec![
                    (a.as_mut_slice(), true),
                    (b.as_mut_slice(), true),
                    (shadow.as_mut_slice(), true),
                    bias,
                ]
            }
        }
    }

    pub fn param_slot_count(&self) -> usize {
        if self.is_factorized() {
            4
        } else {
            2
        }
    }

    /// Re-zeroes masked entries after an update.
    pub fn apply_mask(&mut self) {
        match &mut self.kind {
            LayerKind::Dense { .. } => {}
            LayerKind::Sparse { weight, state } => zero_masked(weight, &state.mask),
            LayerKind::Factorized {
                shadow, shadow_mask, ..
            } => zero_masked(shadow, shadow_mask),
        }
    }
}

pub(crate) fn zero_masked(weight: &mut Matrix, mask: &Matrix) {
    for (w, &m) in weight.as_mut_slice().iter_mut().zip(mask.as_slice()) {
        if m == 0.0 {
            *w = 0.0;
        }
    }
}

fn check_binary(mask: &Matrix) -> Result<()> {
    if mask.as_slice().iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::invalid("mask entries must be exactly 0 or 1"));
    }
    Ok(())
}
