//! JSON experiment configuration with defaults and key-path error reporting.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factorize::{Weighting, DEFAULT_EPSILON_FLOOR};
use crate::linalg::DEFAULT_RANK_TOL;
use crate::mixedrank::MixedRankConfig;
use crate::nn::{SyntheticSpec, TrainConfig};
use crate::prune::{PruneMethod, SparsitySchedule, DEFAULT_PRUNE_INTERVAL};

use super::dataset::TaskKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    /// `spec.n` training samples plus `test_n` held-out samples from one generator run.
    Synthetic {
        spec: SyntheticSpec,
        #[serde(default)]
        seed: u64,
        #[serde(default = "default_test_n")]
        test_n: usize,
    },
    /// CSV files; without `test` the last `test_fraction` of `train` is held out.
    Csv {
        train: PathBuf,
        #[serde(default)]
        test: Option<PathBuf>,
        task: TaskKind,
        #[serde(default = "default_test_fraction")]
        test_fraction: f64,
    },
}

fn default_test_n() -> usize {
    4000
}
fn default_test_fraction() -> f64 {
    0.2
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig::Synthetic {
            spec: SyntheticSpec::LowrankTeacher {
                n: 100_000,
                dim: 64,
                num_classes: 10,
                rank: 16,
                teacher_hidden: 128,
            },
            seed: 0,
            test_n: default_test_n(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { hidden: vec![256, 256] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PruneConfig {
    pub method: PruneMethod,
    pub v_final: f64,
    pub warmup_steps: usize,
    pub cooldown_steps: usize,
    pub interval: usize,
    /// Layers to prune; `None` means every layer except the output layer.
    pub layers: Option<Vec<usize>>,
    /// Optimizer settings; `train.total_steps` is the schedule length.
    pub train: TrainConfig,
}

impl Default for PruneConfig {
    fn default() -> Self {
        Self {
            method: PruneMethod::FirstOrder,
            v_final: 0.25,
            warmup_steps: 300,
            cooldown_steps: 600,
            interval: DEFAULT_PRUNE_INTERVAL,
            layers: None,
            train: TrainConfig {
                total_steps: 3000,
                ..TrainConfig::default()
            },
        }
    }
}

impl PruneConfig {
    pub fn schedule(&self) -> Result<SparsitySchedule> {
        self.schedule_with_v(self.v_final)
    }

    pub fn schedule_with_v(&self, v_final: f64) -> Result<SparsitySchedule> {
        SparsitySchedule::new(v_final, self.warmup_steps, self.cooldown_steps, self.train.total_steps)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FactorizeConfig {
    /// Uniform rank; when absent it is derived from `param_fraction`.
    pub rank: Option<usize>,
    /// Target share of the selected layers' weight parameters kept by the factors.
    pub param_fraction: f64,
    pub weighting: Weighting,
    /// Layers to factorize; `None` means every layer except the output layer.
    pub layers: Option<Vec<usize>>,
    pub epsilon_floor: f64,
}

impl Default for FactorizeConfig {
    fn default() -> Self {
        Self {
            rank: None,
            param_fraction: 0.25,
            weighting: Weighting::Score,
            layers: None,
            epsilon_floor: DEFAULT_EPSILON_FLOOR,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneConfig {
    pub p_init: f64,
    pub decay: Option<f64>,
    pub consistency_weight: f64,
    pub train: TrainConfig,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        let m = MixedRankConfig::default();
        Self {
            p_init: m.p_init,
            decay: m.decay,
            consistency_weight: m.consistency_weight,
            train: TrainConfig {
                total_steps: 1500,
                ..TrainConfig::default()
            },
        }
    }
}

impl FinetuneConfig {
    pub fn mixed(&self, seed: u64) -> MixedRankConfig {
        MixedRankConfig {
            p_init: self.p_init,
            decay: self.decay,
            consistency_weight: self.consistency_weight,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    /// Kept-parameter budgets.
    pub budgets: Vec<f64>,
    pub rank_tol: f64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            budgets: vec![0.75, 0.5, 0.25, 0.1],
            rank_tol: DEFAULT_RANK_TOL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub v_grid: Vec<f64>,
    pub weightings: Vec<Weighting>,
    pub p_init_grid: Vec<f64>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            v_grid: vec![0.1, 0.25, 0.5, 0.75],
            weightings: vec![Weighting::Score, Weighting::Mask, Weighting::None],
            p_init_grid: vec![0.0, 0.1, 0.3, 0.5, 0.7],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    /// Dense training before pruning.
    pub train: TrainConfig,
    pub prune: PruneConfig,
    pub factorize: FactorizeConfig,
    pub finetune: FinetuneConfig,
    pub study: StudyConfig,
    pub ablation: AblationConfig,
    /// Seed of a single run; stage seeds are derived from it.
    pub seed: u64,
    /// Seeds used by the study and ablation suites.
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig {
                total_steps: 6000,
                learning_rate: 2e-3,
                ..TrainConfig::default()
            },
            prune: PruneConfig::default(),
            factorize: FactorizeConfig::default(),
            finetune: FinetuneConfig::default(),
            study: StudyConfig::default(),
            ablation: AblationConfig::default(),
            seed: 0,
            seeds: vec![0, 1, 2],
            out_dir: PathBuf::from("runs"),
        }
    }
}

fn bad(key: &str, reason: impl Into<String>) -> Error {
    Error::Config {
        key: key.to_string(),
        reason: reason.into(),
    }
}

fn check_fraction(key: &str, v: f64) -> Result<()> {
    if !(v > 0.0) {
        return Err(bad(key, "kept fraction must be positive"));
    }
    if v > 1.0 {
        return Err(bad(key, "kept fraction must be at most 1"));
    }
    Ok(())
}

fn check_train(key: &str, t: &TrainConfig) -> Result<()> {
    t.validate().map_err(|e| bad(key, e.to_string()))
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        match &self.dataset {
            DatasetConfig::Synthetic { spec, test_n, .. } => {
                spec.validate().map_err(|e| bad("dataset.spec", e.to_string()))?;
                if *test_n == 0 {
                    return Err(bad("dataset.test_n", "must be at least 1"));
                }
            }
            DatasetConfig::Csv {
                test_fraction, test, ..
            } => {
                if test.is_none() && !(*test_fraction > 0.0 && *test_fraction < 1.0) {
                    return Err(bad("dataset.test_fraction", "must lie in (0, 1)"));
                }
            }
        }
        if self.model.hidden.contains(&0) {
            return Err(bad("model.hidden", "layer widths must be positive"));
        }
        check_train("train", &self.train)?;
        check_train("prune.train", &self.prune.train)?;
        check_fraction("prune.v_final", self.prune.v_final)?;
        if self.prune.interval == 0 {
            return Err(bad("prune.interval", "must be at least 1"));
        }
        self.prune
            .schedule()
            .map_err(|e| bad("prune.warmup_steps", e.to_string()))?;
        if self.factorize.rank == Some(0) {
            return Err(bad("factorize.rank", "must be at least 1"));
        }
        check_fraction("factorize.param_fraction", self.factorize.param_fraction)?;
        if !(self.factorize.epsilon_floor > 0.0) {
            return Err(bad("factorize.epsilon_floor", "must be positive"));
        }
        check_train("finetune.train", &self.finetune.train)?;
        self.finetune
            .mixed(0)
            .validate()
            .map_err(|e| bad("finetune", e.to_string()))?;
        for (i, &b) in self.study.budgets.iter().enumerate() {
            check_fraction(&format!("study.budgets[{i}]"), b)?;
        }
        if !(self.study.rank_tol > 0.0) {
            return Err(bad("study.rank_tol", "must be positive"));
        }
        for (i, &v) in self.ablation.v_grid.iter().enumerate() {
            check_fraction(&format!("ablation.v_grid[{i}]"), v)?;
        }
        for (i, &p) in self.ablation.p_init_grid.iter().enumerate() {
            if !(0.0..=1.0).contains(&p) {
                return Err(bad(&format!("ablation.p_init_grid[{i}]"), "must lie in [0, 1]"));
            }
        }
        if self.seeds.is_empty() {
            return Err(bad("seeds", "at least one seed is required"));
        }
        Ok(())
    }
}

/// Parses and validates config text; relative CSV paths resolve against `base`.
pub fn parse_config(text: &str, base: Option<&Path>) -> Result<ExperimentConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let mut cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let key = e.path().to_string();
        bad(if key.is_empty() { "." } else { &key }, e.into_inner().to_string())
    })?;
    if let (Some(base), DatasetConfig::Csv { train, test, .. }) = (base, &mut cfg.dataset) {
        *train = base.join(&*train);
        if let Some(t) = test {
            *t = base.join(&*t);
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text, path.parent())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = parse_config("{}", None).unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        let cfg = parse_config(r#"{"prune": {"v_final": 0.1}}"#, None).unwrap();
        assert_eq!(cfg.prune.v_final, 0.1);
        assert_eq!(cfg.prune.interval, DEFAULT_PRUNE_INTERVAL);
    }

    #[test]
    fn zero_kept_fraction_rejected() {
        let err = parse_config(r#"{"prune": {"v_final": 0.0}}"#, None).unwrap_err();
        let msg = err.to_string();
        assert!(
            msg.contains("prune.v_final") && msg.contains("kept fraction must be positive"),
            "{msg}"
        );
    }

    #[test]
    fn unknown_keys_report_path() {
        let msg = parse_config(r#"{"finetune": {"train": {"lr": 0.1}}}"#, None)
            .unwrap_err()
            .to_string();
        assert!(msg.contains("finetune.train") && msg.contains("lr"), "{msg}");
        let msg = parse_config(r#"{"prune": {"method": "second_order"}}"#, None)
            .unwrap_err()
            .to_string();
        assert!(msg.contains("prune.method"), "{msg}");
    }

    #[test]
    fn round_trip_makes_defaults_explicit() {
        let cfg = parse_config(r#"{"seed": 7, "factorize": {"weighting": "mask"}}"#, None).unwrap();
        let text = serde_json::to_string(&cfg).unwrap();
        assert!(text.contains("\"epsilon_floor\""));
        assert_eq!(parse_config(&text, None).unwrap(), cfg);
    }

    #[test]
    fn csv_paths_resolve_against_config_dir() {
        let cfg = parse_config(
            r#"{"dataset": {"source": "csv", "train": "d.csv", "task": "classification"}}"#,
            Some(Path::new("/tmp/x")),
        )
        .unwrap();
        match cfg.dataset {
            DatasetConfig::Csv { train, .. } => assert_eq!(train, Path::new("/tmp/x/d.csv")),
            _ => unreachable!(),
        }
    }
}
