//! `manifest.json` plus one little-endian `f64` blob per layer.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{FactorPair, Matrix};
use crate::nn::{LayerKind, LinearLayer, MlpModel, Task};
use crate::prune::{PruneMethod, PruneState};

pub const DTYPE: &str = "f64le";
const FORMAT: &str = "lpaf-checkpoint";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TensorRole {
    Weight,
    Bias,
    Mask,
    Score,
    FactorA,
    FactorB,
    Shadow,
}

impl TensorRole {
    fn as_str(&self) -> &'static str {
        match self {
            TensorRole::Weight => "weight",
            TensorRole::Bias => "bias",
            TensorRole::Mask => "mask",
            TensorRole::Score => "score",
            TensorRole::FactorA => "factor_a",
            TensorRole::FactorB => "factor_b",
            TensorRole::Shadow => "shadow",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        [
            TensorRole::Weight,
            TensorRole::Bias,
            TensorRole::Mask,
            TensorRole::Score,
            TensorRole::FactorA,
            TensorRole::FactorB,
            TensorRole::Shadow,
        ]
        .into_iter()
        .find(|r| r.as_str() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub kind: String,
    pub rows: usize,
    pub cols: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prune_method: Option<PruneMethod>,
}

/// Roles are kept as strings so that unknown roles can be reported by tensor name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub layer: usize,
    pub role: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub blob_file: String,
    pub byte_offset: usize,
    pub byte_length: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub task: Task,
    pub layers: Vec<LayerRecord>,
    pub tensors: Vec<TensorRecord>,
}

type TensorView<'a> = (TensorRole, Vec<usize>, &'a [f64]);

fn mat(role: TensorRole, x: &Matrix) -> TensorView<'_> {
    (role, vec![x.rows(), x.cols()], x.as_slice())
}

fn layer_tensors(layer: &LinearLayer) -> (LayerRecord, Vec<TensorView<'_>>) {
    let (n, m) = layer.shape();
    let bias = (TensorRole::Bias, vec![n], layer.bias.as_slice());
    let (kind, method, mut tensors) = match &layer.kind {
        LayerKind::Dense { weight } => ("dense", None, vec![mat(TensorRole::Weight, weight)]),
        LayerKind::Sparse { weight, state } => (
            "sparse",
            Some(state.method),
            vec![
                mat(TensorRole::Weight, weight),
                mat(TensorRole::Mask, &state.mask),
                mat(TensorRole::Score, &state.score),
            ],
        ),
        LayerKind::Factorized {
            pair,
            shadow,
            shadow_mask,
        } => (
            "factorized",
            None,
            vec![
                mat(TensorRole::FactorA, pair.a()),
                mat(TensorRole::FactorB, pair.b()),
                mat(TensorRole::Shadow, shadow),
                mat(TensorRole::Mask, shadow_mask),
            ],
        ),
    };
    tensors.push(bias);
    let record = LayerRecord {
        kind: kind.to_string(),
        rows: n,
        cols: m,
        prune_method: method,
    };
    (record, tensors)
}

/// Writes `manifest.json` and `layer{i}.bin` into `dir`, creating it if needed.
pub fn save_checkpoint(model: &MlpModel, dir: &Path) -> Result<Manifest> {
    model.validate()?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = Manifest {
        format: FORMAT.to_string(),
        version: VERSION,
        task: model.task,
        layers: Vec::new(),
        tensors: Vec::new(),
    };
    for (i, layer) in model.layers.iter().enumerate() {
        let (record, tensors) = layer_tensors(layer);
        let blob_file = format!("layer{i}.bin");
        let mut blob = Vec::new();
        for (role, shape, data) in tensors {
            let byte_offset = blob.len();
            for v in data {
                blob.extend_from_slice(&v.to_le_bytes());
            }
            manifest.tensors.push(TensorRecord {
                name: format!("layer{i}.{}", role.as_str()),
                layer: i,
                role: role.as_str().to_string(),
                shape,
                dtype: DTYPE.to_string(),
                blob_file: blob_file.clone(),
                byte_offset,
                byte_length: blob.len() - byte_offset,
            });
        }
        let path = dir.join(&blob_file);
        std::fs::write(&path, &blob).map_err(|e| Error::io(&path, e))?;
        manifest.layers.push(record);
    }
    super::write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

pub fn load_checkpoint(dir: &Path) -> Result<MlpModel> {
    let path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.format != FORMAT || manifest.version != VERSION {
        return Err(Error::invalid(format!(
            "unsupported checkpoint format {} v{}",
            manifest.format, manifest.version
        )));
    }

    let mut blobs: BTreeMap<&str, Vec<u8>> = BTreeMap::new();
    let mut found: BTreeMap<(usize, TensorRole), (&TensorRecord, Vec<f64>)> = BTreeMap::new();
    for t in &manifest.tensors {
        let fail = |reason: String| Error::Checkpoint {
            tensor: t.name.clone(),
            reason,
        };
        let role = TensorRole::parse(&t.role).ok_or_else(|| fail(format!("unknown role `{}`", t.role)))?;
        if t.dtype != DTYPE {
            return Err(fail(format!("unknown dtype `{}`", t.dtype)));
        }
        if t.layer >= manifest.layers.len() {
            return Err(fail(format!("layer {} does not exist", t.layer)));
        }
        let expected = 8 * t.shape.iter().product::<usize>();
        if t.byte_length != expected {
            return Err(fail(format!(
                "byte_length {} does not match shape {:?}",
                t.byte_length, t.shape
            )));
        }
        if !blobs.contains_key(t.blob_file.as_str()) {
            if t.blob_file.contains(['/', '\\']) {
                return Err(fail(format!("blob file `{}` must be a plain file name", t.blob_file)));
            }
            let p = dir.join(&t.blob_file);
            let bytes = std::fs::read(&p).map_err(|e| fail(format!("cannot read {}: {e}", p.display())))?;
            blobs.insert(&t.blob_file, bytes);
        }
        let blob = &blobs[t.blob_file.as_str()];
        let end = t.byte_offset.checked_add(t.byte_length).filter(|&e| e <= blob.len());
        let Some(end) = end else {
            return Err(fail(format!(
                "blob {} is truncated ({} bytes, need {})",
                t.blob_file,
                blob.len(),
                t.byte_offset + t.byte_length
            )));
        };
        let values = blob[t.byte_offset..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        if found.insert((t.layer, role), (t, values)).is_some() {
            return Err(fail("duplicate tensor".into()));
        }
    }

    let mut layers = Vec::with_capacity(manifest.layers.len());
    for (i, rec) in manifest.layers.iter().enumerate() {
        let mut take = |role: TensorRole| -> Result<(&TensorRecord, Vec<f64>)> {
            found.remove(&(i, role)).ok_or_else(|| Error::Checkpoint {
                tensor: format!("layer{i}.{}", role.as_str()),
                reason: "missing".into(),
            })
        };
        let matrix = |(t, v): (&TensorRecord, Vec<f64>)| -> Result<Matrix> {
            match t.shape[..] {
                [r, c] => Matrix::from_vec(r, c, v),
                _ => Err(Error::Checkpoint {
                    tensor: t.name.clone(),
                    reason: format!("expected a 2-d shape, got {:?}", t.shape),
                }),
            }
        };
        let kind = match rec.kind.as_str() {
            "dense" => LayerKind::Dense {
                weight: matrix(take(TensorRole::Weight)?)?,
            },
            "sparse" => {
                let method = rec.prune_method.ok_or_else(|| Error::Checkpoint {
                    tensor: format!("layer{i}"),
                    reason: "sparse layer without prune_method".into(),
                })?;
                LayerKind::Sparse {
                    weight: matrix(take(TensorRole::Weight)?)?,
                    state: PruneState {
                        mask: matrix(take(TensorRole::Mask)?)?,
                        score: matrix(take(TensorRole::Score)?)?,
                        method,
                    },
                }
            }
            "factorized" => LayerKind::Factorized {
                pair: FactorPair::new(matrix(take(TensorRole::FactorA)?)?, matrix(take(TensorRole::FactorB)?)?)?,
                shadow: matrix(take(TensorRole::Shadow)?)?,
                shadow_mask: matrix(take(TensorRole::Mask)?)?,
            },
            other => {
                return Err(Error::Checkpoint {
                    tensor: format!("layer{i}"),
                    reason: format!("unknown layer kind `{other}`"),
                })
            }
        };
        let (bt, bias) = take(TensorRole::Bias)?;
        if bt.shape != [rec.rows] {
            return Err(Error::Checkpoint {
                tensor: bt.name.clone(),
                reason: format!("shape {:?} does not match layer rows {}", bt.shape, rec.rows),
            });
        }
        let layer = LinearLayer { kind, bias };
        if layer.shape() != (rec.rows, rec.cols) {
            return Err(Error::Checkpoint {
                tensor: format!("layer{i}"),
                reason: format!(
                    "tensors give shape {:?}, manifest says {:?}",
                    layer.shape(),
                    (rec.rows, rec.cols)
                ),
            });
        }
        layer.validate().map_err(|e| Error::Checkpoint {
            tensor: format!("layer{i}"),
            reason: e.to_string(),
        })?;
        layers.push(layer);
    }
    if let Some(((_, _), (t, _))) = found.into_iter().next() {
        return Err(Error::Checkpoint {
            tensor: t.name.clone(),
            reason: format!(
                "role `{}` does not belong to a {} layer",
                t.role, manifest.layers[t.layer].kind
            ),
        });
    }
    MlpModel::from_layers(layers, manifest.task)
}
