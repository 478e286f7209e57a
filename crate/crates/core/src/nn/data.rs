use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::model::{Targets, Task};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Feature matrix plus one target per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Matrix,
    pub targets: Targets,
    pub task: Task,
}

impl Dataset {
    pub fn new(features: Matrix, targets: Targets, task: Task) -> Result<Self> {
        if targets.len() != features.rows() {
            return Err(Error::invalid(format!(
                "{} targets for {} feature rows",
                targets.len(),
                features.rows()
            )));
        }
        match (&targets, task) {
            (Targets::Classes(c), Task::Classification { num_classes }) => {
                if let Some(bad) = c.iter().find(|&&c| c >= num_classes) {
                    return Err(Error::invalid(format!("class id {bad} >= {num_classes}")));
                }
            }
            (Targets::Values(_), Task::Regression) => {}
            _ => return Err(Error::invalid("target kind does not match task")),
        }
        Ok(Self {
            features,
            targets,
            task,
        })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn select(&self, idx: &[usize]) -> (Matrix, Targets) {
        let cols = self.features.cols();
        let mut data = Vec::with_capacity(idx.len() * cols);
        for &i in idx {
            data.extend_from_slice(self.features.row(i));
        }
        let features = Matrix::from_vec(idx.len(), cols, data).expect("row gather keeps shape");
        (features, self.targets.select(idx))
    }

    /// Splits into the first `n` rows and the rest.
    pub fn split_at(&self, n: usize) -> Result<(Dataset, Dataset)> {
        if n == 0 || n >= self.len() {
            return Err(Error::invalid(format!("split point {n} outside 1..{}", self.len())));
        }
        let head: Vec<usize> = (0..n).collect();
        let tail: Vec<usize> = (n..self.len()).collect();
        let (fa, ta) = self.select(&head);
        let (fb, tb) = self.select(&tail);
        Ok((Dataset::new(fa, ta, self.task)?, Dataset::new(fb, tb, self.task)?))
    }
}

/// Yields mini-batches from a seeded per-epoch shuffle; a short final batch is dropped.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    order: Vec<usize>,
    cursor: usize,
    batch_size: usize,
    rng: ChaCha8Rng,
}

impl BatchSampler {
    pub fn new(n: usize, batch_size: usize, seed: u64) -> Result<Self> {
        if batch_size == 0 || n == 0 {
            return Err(Error::invalid("batch size and dataset size must be positive"));
        }
        let batch_size = batch_size.min(n);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_ba7c);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        Ok(Self {
            order,
            cursor: 0,
            batch_size,
            rng,
        })
    }

    pub fn next_batch(&mut self) -> &[usize] {
        if self.cursor + self.batch_size > self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let start = self.cursor;
        self.cursor += self.batch_size;
        &self.order[start..self.cursor]
    }
}

/// Desk-scale synthetic tasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SyntheticSpec {
    /// Gaussian clusters around uniformly drawn centers in `[-separation, separation]^dim`.
    Blobs {
        n: usize,
        dim: usize,
        num_classes: usize,
        #[serde(default = "default_separation")]
        separation: f64,
        #[serde(default = "default_noise")]
        noise: f64,
    },
    /// Interleaved 2-D spirals, padded with small noise dimensions up to `dim`.
    Spirals {
        n: usize,
        dim: usize,
        num_classes: usize,
        #[serde(default = "default_spiral_noise")]
        noise: f64,
    },
    /// Labels from a frozen random teacher MLP whose first weight matrix has rank `rank`.
    LowrankTeacher {
        n: usize,
        dim: usize,
        num_classes: usize,
        rank: usize,
        #[serde(default = "default_teacher_hidden")]
        teacher_hidden: usize,
    },
}

fn default_separation() -> f64 {
    6.0
}
fn default_noise() -> f64 {
    1.0
}
fn default_spiral_noise() -> f64 {
    0.05
}
fn default_teacher_hidden() -> usize {
    64
}

impl SyntheticSpec {
    pub fn num_classes(&self) -> usize {
        match self {
            SyntheticSpec::Blobs { num_classes, .. }
            | SyntheticSpec::Spirals { num_classes, .. }
            | SyntheticSpec::LowrankTeacher { num_classes, .. } => *num_classes,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            SyntheticSpec::Blobs { dim, .. }
            | SyntheticSpec::Spirals { dim, .. }
            | SyntheticSpec::LowrankTeacher { dim, .. } => *dim,
        }
    }

    pub fn n(&self) -> usize {
        match self {
            SyntheticSpec::Blobs { n, .. }
            | SyntheticSpec::Spirals { n, .. }
            | SyntheticSpec::LowrankTeacher { n, .. } => *n,
        }
    }

    /// Same spec with a different sample count.
    pub fn with_n(&self, new_n: usize) -> Self {
        let mut s = self.clone();
        match &mut s {
            SyntheticSpec::Blobs { n, .. }
            | SyntheticSpec::Spirals { n, .. }
            | SyntheticSpec::LowrankTeacher { n, .. } => *n = new_n,
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        let (n, dim, k) = (self.n(), self.dim(), self.num_classes());
        if k < 2 {
            return Err(Error::invalid("num_classes must be at least 2"));
        }
        if dim < 2 {
            return Err(Error::invalid("dim must be at least 2"));
        }
        if n < k {
            return Err(Error::invalid(format!("n = {n} is smaller than num_classes = {k}")));
        }
        match self {
            SyntheticSpec::Blobs { separation, noise, .. } if !(*separation > 0.0 && *noise >= 0.0) => {
                Err(Error::invalid("blobs need separation > 0 and noise >= 0"))
            }
            SyntheticSpec::Spirals { noise, .. } if !(*noise >= 0.0) => Err(Error::invalid("spirals need noise >= 0")),
            SyntheticSpec::LowrankTeacher {
                rank, teacher_hidden, ..
            } if *rank == 0 || *rank > dim.min(*teacher_hidden) => Err(Error::invalid(format!(
                "teacher rank {rank} outside 1..={}",
                dim.min(*teacher_hidden)
            ))),
            _ => Ok(()),
        }
    }
}

/// Frozen teacher network used by [`SyntheticSpec::LowrankTeacher`].
#[derive(Debug, Clone)]
pub struct LowRankTeacher {
    first: Matrix,
    first_bias: Vec<f64>,
    second: Matrix,
}

impl LowRankTeacher {
    pub fn new<R: Rng + ?Sized>(
        dim: usize,
        hidden: usize,
        num_classes: usize,
        rank: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let left = Matrix::random_normal(hidden, rank, 1.0, rng);
        let right = Matrix::random_normal(dim, rank, 1.0, rng);
        let first = left.matmul_t(&right)?.scale(1.0 / ((rank * dim) as f64).sqrt());
        let first_bias = (0..hidden)
            .map(|_| 0.5 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let second = Matrix::random_normal(num_classes, hidden, (1.0 / hidden as f64).sqrt(), rng);
        Ok(Self {
            first,
            first_bias,
            second,
        })
    }

    /// The planted low-rank first weight matrix, `(hidden, dim)`.
    pub fn first_layer(&self) -> &Matrix {
        &self.first
    }

    pub fn logits(&self, x: &Matrix) -> Result<Matrix> {
        let mut h = x.matmul_t(&self.first)?;
        for r in 0..h.rows() {
            for (v, b) in h.row_mut(r).iter_mut().zip(&self.first_bias) {
                *v = (*v + b).max(0.0);
            }
        }
        h.matmul_t(&self.second)
    }
}

/// Generates a synthetic dataset; identical `(spec, seed)` gives identical bits.
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let task = Task::Classification {
        num_classes: spec.num_classes(),
    };
    match *spec {
        SyntheticSpec::Blobs {
            n,
            dim,
            num_classes,
            separation,
            noise,
        } => {
            let centers = Matrix::random_uniform(num_classes, dim, -separation, separation, &mut rng);
            let mut features = Matrix::zeros(n, dim);
            let mut labels = Vec::with_capacity(n);
            for i in 0..n {
                let c = i % num_classes;
                for j in 0..dim {
                    features[(i, j)] = centers[(c, j)] + noise * rng.sample::<f64, _>(StandardNormal);
                }
                labels.push(c);
            }
            Dataset::new(features, Targets::Classes(labels), task)
        }
        SyntheticSpec::Spirals {
            n,
            dim,
            num_classes,
            noise,
        } => {
            let mut features = Matrix::zeros(n, dim);
            let mut labels = Vec::with_capacity(n);
            for i in 0..n {
                let c = i % num_classes;
                let t: f64 = rng.gen_range(0.05..1.0);
                let angle = 2.0 * std::f64::consts::PI * (1.5 * t + c as f64 / num_classes as f64);
                features[(i, 0)] = 3.0 * t * angle.cos() + noise * rng.sample::<f64, _>(StandardNormal);
                features[(i, 1)] = 3.0 * t * angle.sin() + noise * rng.sample::<f64, _>(StandardNormal);
                for j in 2..dim {
                    features[(i, j)] = noise * rng.sample::<f64, _>(StandardNormal);
                }
                labels.push(c);
            }
            Dataset::new(features, Targets::Classes(labels), task)
        }
        SyntheticSpec::LowrankTeacher {
            n,
            dim,
            num_classes,
            rank,
            teacher_hidden,
        } => {
            let teacher = LowRankTeacher::new(dim, teacher_hidden, num_classes, rank, &mut rng)?;
            let features = Matrix::random_normal(n, dim, 1.0, &mut rng);
            let mut logits = teacher.logits(&features)?;
            // centre each class logit so classes are roughly balanced
            for c in 0..num_classes {
                let mean = (0..n).map(|i| logits[(i, c)]).sum::<f64>() / n as f64;
                (0..n).for_each(|i| logits[(i, c)] -= mean);
            }
            let labels = (0..n)
                .map(|i| {
                    let row = logits.row(i);
                    (0..num_classes)
                        .max_by(|&a, &b| row[a].total_cmp(&row[b]).then(b.cmp(&a)))
                        .unwrap()
                })
                .collect();
            Dataset::new(features, Targets::Classes(labels), task)
        }
    }
}

/// Teacher behind a [`SyntheticSpec::LowrankTeacher`] dataset generated with `seed`.
pub fn lowrank_teacher(spec: &SyntheticSpec, seed: u64) -> Result<LowRankTeacher> {
    match *spec {
        SyntheticSpec::LowrankTeacher {
            dim,
            num_classes,
            rank,
            teacher_hidden,
            ..
        } => {
            spec.validate()?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            LowRankTeacher::new(dim, teacher_hidden, num_classes, rank, &mut rng)
        }
        _ => Err(Error::invalid("spec is not a lowrank_teacher task")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{numerical_rank, DEFAULT_RANK_TOL};

    fn teacher_spec() -> SyntheticSpec {
        SyntheticSpec::LowrankTeacher {
            n: 500,
            dim: 16,
            num_classes: 4,
            rank: 4,
            teacher_hidden: 32,
        }
    }

    #[test]
    fn same_seed_same_bits() {
        let a = generate_synthetic(&teacher_spec(), 9).unwrap();
        let b = generate_synthetic(&teacher_spec(), 9).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(&teacher_spec(), 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn teacher_rank_is_planted() {
        let t = lowrank_teacher(&teacher_spec(), 3).unwrap();
        assert_eq!(numerical_rank(t.first_layer(), DEFAULT_RANK_TOL).unwrap(), 4);
    }

    #[test]
    fn teacher_labels_use_every_class() {
        let d = generate_synthetic(&teacher_spec(), 1).unwrap();
        let Targets::Classes(c) = &d.targets else { panic!() };
        for k in 0..4 {
            assert!(c.iter().filter(|&&x| x == k).count() > 25, "class {k} underpopulated");
        }
    }

    #[test]
    fn invalid_params_rejected() {
        let bad = SyntheticSpec::Blobs {
            n: 10,
            dim: 2,
            num_classes: 1,
            separation: 1.0,
            noise: 1.0,
        };
        assert!(generate_synthetic(&bad, 0).is_err());
        let bad = SyntheticSpec::Spirals {
            n: 1,
            dim: 2,
            num_classes: 2,
            noise: 0.1,
        };
        assert!(generate_synthetic(&bad, 0).is_err());
        let bad = SyntheticSpec::LowrankTeacher {
            n: 10,
            dim: 4,
            num_classes: 2,
            rank: 5,
            teacher_hidden: 8,
        };
        assert!(generate_synthetic(&bad, 0).is_err());
    }

    #[test]
    fn sampler_covers_epoch_and_is_seeded() {
        let mut s = BatchSampler::new(10, 3, 1).unwrap();
        let mut seen: Vec<usize> = (0..3).flat_map(|_| s.next_batch().to_vec()).collect();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 9);
        let mut a = BatchSampler::new(10, 3, 7).unwrap();
        let mut b = BatchSampler::new(10, 3, 7).unwrap();
        for _ in 0..10 {
            assert_eq!(a.next_batch(), b.next_batch());
        }
    }
}
