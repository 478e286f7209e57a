#![allow(dead_code)]

use lpaf::factorize::{factorize_model, Weighting};
use lpaf::nn::{LayerKind, MlpModel, Task};
use lpaf::prune::{accumulate_first_order, prune_to, sparsify, PruneMethod};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A small random model whose layers are dense, sparse or factorized.
/// `kinds[i]` picks layer `i`'s kind: 0 dense, 1 sparse, 2 factorized; the
/// output layer is always dense.
pub fn random_model(seed: u64, kinds: &[u8]) -> MlpModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dims = vec![rng.gen_range(2..12)];
    for _ in 0..kinds.len() {
        dims.push(rng.gen_range(2..12));
    }
    let task = if rng.gen_bool(0.8) {
        let classes = rng.gen_range(2..6);
        dims.push(classes);
        Task::Classification { num_classes: classes }
    } else {
        dims.push(1);
        Task::Regression
    };
    let mut model = MlpModel::new(&dims, task, &mut rng).unwrap();
    for b in model.layers.iter_mut().flat_map(|l| l.bias.iter_mut()) {
        *b = rng.gen_range(-0.5..0.5);
    }
    let mut plan = Vec::new();
    for (l, &kind) in kinds.iter().enumerate() {
        if kind == 0 {
            continue;
        }
        let method = if rng.gen_bool(0.5) {
            PruneMethod::FirstOrder
        } else {
            PruneMethod::ZeroOrder
        };
        sparsify(&mut model, &[l], method).unwrap();
        let v = rng.gen_range(0.2..0.9);
        let LayerKind::Sparse { weight, state } = &mut model.layers[l].kind else {
            unreachable!()
        };
        let g: Vec<f64> = (0..weight.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        if method == PruneMethod::FirstOrder {
            accumulate_first_order(state, weight, &g).unwrap();
        }
        prune_to(state, weight, v).unwrap();
        if kind == 2 {
            let (n, m) = (dims[l + 1], dims[l]);
            plan.push((l, rng.gen_range(1..=n.min(m))));
        }
    }
    if plan.is_empty() {
        model
    } else {
        factorize_model(&model, &plan, Weighting::Score, 1e-6).unwrap()
    }
}

pub fn relative_error(a: &lpaf::linalg::Matrix, b: &lpaf::linalg::Matrix) -> f64 {
    let denom = b.frobenius_norm().max(f64::MIN_POSITIVE);
    a.sub(b).unwrap().frobenius_norm() / denom
}

/// `max |QᵀQ - I|` over the entries.
pub fn orthogonality_deviation(q: &lpaf::linalg::Matrix) -> f64 {
    let g = q.t_matmul(q).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..g.rows() {
        for j in 0..g.cols() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g[(i, j)] - target).abs());
        }
    }
    worst
}

/// A config small enough for a full pipeline run in well under a second.
pub fn tiny_config() -> lpaf::io::ExperimentConfig {
    use lpaf::io::{DatasetConfig, ExperimentConfig, ModelConfig};
    use lpaf::nn::SyntheticSpec;
    let mut cfg = ExperimentConfig {
        dataset: DatasetConfig::Synthetic {
            spec: SyntheticSpec::LowrankTeacher {
                n: 400,
                dim: 8,
                num_classes: 3,
                rank: 2,
                teacher_hidden: 16,
            },
            seed: 1,
            test_n: 200,
        },
        model: ModelConfig { hidden: vec![16, 16] },
        ..ExperimentConfig::default()
    };
    cfg.train.total_steps = 150;
    cfg.prune.train.total_steps = 80;
    cfg.prune.warmup_steps = 8;
    cfg.prune.cooldown_steps = 16;
    cfg.prune.interval = 4;
    cfg.finetune.train.total_steps = 40;
    cfg.study.budgets = vec![0.5];
    cfg.ablation.v_grid = vec![0.5];
    cfg.ablation.p_init_grid = vec![0.3];
    cfg.seeds = vec![0];
    cfg
}
