//! Feed-forward classifier with manual backpropagation and AdamW.

mod data;
mod layer;
mod model;
mod optim;
mod train;

pub use data::{generate_synthetic, lowrank_teacher, BatchSampler, Dataset, LowRankTeacher, SyntheticSpec};
pub(crate) use layer::zero_masked;
pub use layer::{LayerKind, LinearLayer};
pub use model::{log_softmax, softmax, task_loss, ForwardCache, Gradients, MlpModel, Targets, Task};
pub use optim::AdamW;
pub(crate) use train::with_batch;
pub use train::{argmax, evaluate, train, TrainConfig, Trainer};
