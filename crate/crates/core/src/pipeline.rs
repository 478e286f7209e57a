//! The prune → factorize → mixed-rank fine-tune workflow and the experiment
//! suites built from its stages.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::{factorizable_layers, model_stats_with_tol, ModelStats};
use crate::error::{Error, Result};
use crate::factorize::{factorize_model, rank_for_budget, Weighting};
use crate::io::{load_dataset, save_checkpoint, write_csv, write_json, ExperimentConfig};
use crate::mixedrank::{mixed_rank_finetune, MixedStep};
use crate::nn::{evaluate, train, Dataset, MlpModel, Task, TrainConfig};
use crate::prune::{run_pruning, PruneEvent, PruneMethod, PruneOptions};

/// Offsets mixed into the run seed so every stage draws from its own stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageSeed {
    Init = 1,
    Dense = 2,
    Prune = 3,
    Finetune = 4,
    Gates = 5,
}

pub fn stage_seed(seed: u64, stage: StageSeed) -> u64 {
    seed ^ (stage as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn with_seed(cfg: &TrainConfig, seed: u64) -> TrainConfig {
    TrainConfig { seed, ..cfg.clone() }
}

pub fn metric_name(task: Task) -> &'static str {
    match task {
        Task::Classification { .. } => "accuracy",
        Task::Regression => "mse",
    }
}

/// Layers selected by an optional include-list, defaulting to all but the output layer.
fn selected_layers(model: &MlpModel, layers: &Option<Vec<usize>>) -> Vec<usize> {
    layers.clone().unwrap_or_else(|| factorizable_layers(model))
}

/// Fresh model for the configured architecture.
pub fn init_model(cfg: &ExperimentConfig, seed: u64, data: &Dataset) -> Result<MlpModel> {
    let mut dims = vec![data.dim()];
    dims.extend(&cfg.model.hidden);
    dims.push(data.task.output_width());
    let mut rng = ChaCha8Rng::seed_from_u64(stage_seed(seed, StageSeed::Init));
    MlpModel::new(&dims, data.task, &mut rng)
}

pub fn dense_stage(cfg: &ExperimentConfig, seed: u64, data: &Dataset) -> Result<MlpModel> {
    let mut model = init_model(cfg, seed, data)?;
    train(
        &mut model,
        data,
        &with_seed(&cfg.train, stage_seed(seed, StageSeed::Dense)),
    )?;
    Ok(model)
}

/// Step 1 with an explicit method and kept fraction.
pub fn prune_stage_with(
    cfg: &ExperimentConfig,
    seed: u64,
    dense: &MlpModel,
    data: &Dataset,
    method: PruneMethod,
    v_final: f64,
) -> Result<(MlpModel, Vec<PruneEvent>)> {
    let opts = PruneOptions {
        interval: cfg.prune.interval,
        telemetry: true,
        ..PruneOptions::new(method, selected_layers(dense, &cfg.prune.layers))
    };
    let out = run_pruning(
        dense,
        data,
        &cfg.prune.schedule_with_v(v_final)?,
        &with_seed(&cfg.prune.train, stage_seed(seed, StageSeed::Prune)),
        &opts,
    )?;
    Ok((out.model, out.events))
}

pub fn prune_stage(
    cfg: &ExperimentConfig,
    seed: u64,
    dense: &MlpModel,
    data: &Dataset,
) -> Result<(MlpModel, Vec<PruneEvent>)> {
    prune_stage_with(cfg, seed, dense, data, cfg.prune.method, cfg.prune.v_final)
}

/// Per-layer `(index, k)` plan: a uniform rank, clamped to each layer's full rank.
pub fn factor_plan(cfg: &ExperimentConfig, model: &MlpModel, fraction: f64) -> Vec<(usize, usize)> {
    let layers = selected_layers(model, &cfg.factorize.layers);
    let shapes: Vec<(usize, usize)> = layers
        .iter()
        .filter_map(|&l| model.layers.get(l).map(|x| x.shape()))
        .collect();
    let k = cfg.factorize.rank.unwrap_or_else(|| rank_for_budget(&shapes, fraction));
    layers
        .iter()
        .map(|&l| {
            let full = model.layers.get(l).map_or(k, |x| {
                let (n, m) = x.shape();
                n.min(m)
            });
            (l, k.min(full))
        })
        .collect()
}

pub fn factorize_stage_with(
    cfg: &ExperimentConfig,
    sparse: &MlpModel,
    weighting: Weighting,
    fraction: f64,
) -> Result<MlpModel> {
    let plan = factor_plan(cfg, sparse, fraction);
    factorize_model(sparse, &plan, weighting, cfg.factorize.epsilon_floor)
}

pub fn factorize_stage(cfg: &ExperimentConfig, sparse: &MlpModel) -> Result<MlpModel> {
    factorize_stage_with(cfg, sparse, cfg.factorize.weighting, cfg.factorize.param_fraction)
}

/// Step 3 with explicit gate probability and consistency weight.
pub fn finetune_stage_with(
    cfg: &ExperimentConfig,
    seed: u64,
    factorized: &MlpModel,
    data: &Dataset,
    p_init: f64,
    lambda: f64,
) -> Result<(MlpModel, Vec<MixedStep>)> {
    let mixed = crate::mixedrank::MixedRankConfig {
        p_init,
        consistency_weight: lambda,
        ..cfg.finetune.mixed(stage_seed(seed, StageSeed::Gates))
    };
    let tc = with_seed(&cfg.finetune.train, stage_seed(seed, StageSeed::Finetune));
    mixed_rank_finetune(factorized, data, &mixed, &tc)
}

pub fn finetune_stage(
    cfg: &ExperimentConfig,
    seed: u64,
    factorized: &MlpModel,
    data: &Dataset,
) -> Result<(MlpModel, Vec<MixedStep>)> {
    finetune_stage_with(
        cfg,
        seed,
        factorized,
        data,
        cfg.finetune.p_init,
        cfg.finetune.consistency_weight,
    )
}

/// Plain task-loss fine-tuning with the step-3 budget and batch order.
pub fn vanilla_finetune(cfg: &ExperimentConfig, seed: u64, model: &MlpModel, data: &Dataset) -> Result<MlpModel> {
    let mut model = model.clone();
    train(
        &mut model,
        data,
        &with_seed(&cfg.finetune.train, stage_seed(seed, StageSeed::Finetune)),
    )?;
    Ok(model)
}

/// Datasets and the trained dense model for one seed, shared by every experiment.
#[derive(Debug, Clone)]
pub struct SeedContext {
    pub cfg: ExperimentConfig,
    pub seed: u64,
    pub train: Dataset,
    pub test: Dataset,
    pub dense: MlpModel,
    pub dense_metric: f64,
}

impl SeedContext {
    pub fn prepare(cfg: &ExperimentConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let (train, test) = load_dataset(&cfg.dataset).map_err(Error::in_stage("dataset"))?;
        let dense = dense_stage(cfg, seed, &train).map_err(Error::in_stage("dense"))?;
        let dense_metric = evaluate(&dense, &test)?;
        Ok(Self {
            cfg: cfg.clone(),
            seed,
            train,
            test,
            dense,
            dense_metric,
        })
    }

    pub fn eval(&self, model: &MlpModel) -> Result<f64> {
        evaluate(model, &self.test)
    }

    pub fn stats(&self, model: &MlpModel) -> Result<ModelStats> {
        model_stats_with_tol(model, self.cfg.study.rank_tol)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: String,
    pub metric: f64,
    pub stats: ModelStats,
    pub seconds: f64,
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub metric_name: String,
    pub stages: Vec<StageReport>,
    pub outputs: Vec<PathBuf>,
    pub config: ExperimentConfig,
}

impl RunReport {
    pub fn stage(&self, name: &str) -> Option<&StageReport> {
        self.stages.iter().find(|s| s.stage == name)
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: RunReport,
    pub sparse: MlpModel,
    pub factorized: MlpModel,
    pub model: MlpModel,
}

struct Recorder<'a> {
    ctx: &'a SeedContext,
    out: Option<&'a Path>,
    stages: Vec<StageReport>,
    outputs: Vec<PathBuf>,
}

impl Recorder<'_> {
    fn stage(&mut self, name: &'static str, model: &MlpModel, started: Instant) -> Result<()> {
        let seconds = started.elapsed().as_secs_f64();
        let checkpoint = match self.out {
            Some(dir) => {
                let path = dir.join(name);
                save_checkpoint(model, &path).map_err(Error::in_stage(name))?;
                Some(path)
            }
            None => None,
        };
        let stats = self.ctx.stats(model)?;
        if let Some(dir) = self.out {
            let p = dir.join(format!("stats_{name}.csv"));
            write_csv(&p, &stats.layers)?;
            self.outputs.push(p);
        }
        self.stages.push(StageReport {
            stage: name.to_string(),
            metric: self.ctx.eval(model)?,
            stats,
            seconds,
            checkpoint,
        });
        Ok(())
    }

    fn table<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<()> {
        if let Some(dir) = self.out {
            let p = dir.join(name);
            write_csv(&p, rows)?;
            self.outputs.push(p);
        }
        Ok(())
    }
}

/// Runs all three steps from a prepared context, checkpointing each stage
/// under `out` when given, and writes `report.json` there.
pub fn lpaf_from(ctx: &SeedContext, out: Option<&Path>) -> Result<RunOutcome> {
    let cfg = &ctx.cfg;
    let mut rec = Recorder {
        ctx,
        out,
        stages: Vec::new(),
        outputs: Vec::new(),
    };
    rec.stage("dense", &ctx.dense, Instant::now())?;

    let t = Instant::now();
    let (sparse, events) = prune_stage(cfg, ctx.seed, &ctx.dense, &ctx.train).map_err(Error::in_stage("prune"))?;
    rec.stage("sparse", &sparse, t)?;
    rec.table("prune_events.csv", &events)?;

    let t = Instant::now();
    let factorized = factorize_stage(cfg, &sparse).map_err(Error::in_stage("factorize"))?;
    rec.stage("factorized", &factorized, t)?;

    let t = Instant::now();
    let (model, log) = finetune_stage(cfg, ctx.seed, &factorized, &ctx.train).map_err(Error::in_stage("finetune"))?;
    rec.stage("final", &model, t)?;
    rec.table("finetune_log.csv", &log)?;

    let mut report = RunReport {
        seed: ctx.seed,
        metric_name: metric_name(ctx.dense.task).to_string(),
        stages: rec.stages,
        outputs: rec.outputs,
        config: cfg.clone(),
    };
    if let Some(dir) = out {
        let p = dir.join("report.json");
        report.outputs.push(p.clone());
        write_json(&p, &report)?;
    }
    Ok(RunOutcome {
        report,
        sparse,
        factorized,
        model,
    })
}

/// Full workflow for `cfg.seed`.
pub fn lpaf_run(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<RunOutcome> {
    let ctx = SeedContext::prepare(cfg, cfg.seed)?;
    lpaf_from(&ctx, out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyArm {
    Dense,
    SvdFt,
    UpZero,
    UpFirst,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub seed: u64,
    pub budget: f64,
    pub arm: StudyArm,
    pub metric: f64,
    pub average_rank: f64,
    pub zero_row_fraction: f64,
    pub kept_params: usize,
}

/// Dense baseline plus the SVD_Ft, UP_zero and UP_first arms at each budget.
pub fn study_seed(ctx: &SeedContext, budgets: &[f64]) -> Result<Vec<StudyRow>> {
    let cfg = &ctx.cfg;
    let row = |budget, arm, model: &MlpModel| -> Result<StudyRow> {
        let stats = ctx.stats(model)?;
        Ok(StudyRow {
            seed: ctx.seed,
            budget,
            arm,
            metric: ctx.eval(model)?,
            average_rank: stats.average_rank,
            zero_row_fraction: stats.zero_row_fraction,
            kept_params: stats.kept_params,
        })
    };
    let mut rows = vec![row(1.0, StudyArm::Dense, &ctx.dense)?];
    for &b in budgets {
        let svd = factorize_stage_with(cfg, &ctx.dense, Weighting::None, b).map_err(Error::in_stage("svd_ft"))?;
        let svd = vanilla_finetune(cfg, ctx.seed, &svd, &ctx.train).map_err(Error::in_stage("svd_ft"))?;
        rows.push(row(b, StudyArm::SvdFt, &svd)?);
        for (arm, method) in [
            (StudyArm::UpZero, PruneMethod::ZeroOrder),
            (StudyArm::UpFirst, PruneMethod::FirstOrder),
        ] {
            let (m, _) =
                prune_stage_with(cfg, ctx.seed, &ctx.dense, &ctx.train, method, b).map_err(Error::in_stage("prune"))?;
            rows.push(row(b, arm, &m)?);
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySummary {
    pub budget: f64,
    pub arm: StudyArm,
    pub seeds: usize,
    pub mean_metric: f64,
    pub mean_average_rank: f64,
    pub mean_zero_row_fraction: f64,
}

pub fn summarize_study(rows: &[StudyRow]) -> Vec<StudySummary> {
    let mut keys: Vec<(f64, StudyArm)> = Vec::new();
    for r in rows {
        if !keys.contains(&(r.budget, r.arm)) {
            keys.push((r.budget, r.arm));
        }
    }
    keys.into_iter()
        .map(|(budget, arm)| {
            let group: Vec<&StudyRow> = rows.iter().filter(|r| r.budget == budget && r.arm == arm).collect();
            let n = group.len() as f64;
            StudySummary {
                budget,
                arm,
                seeds: group.len(),
                mean_metric: group.iter().map(|r| r.metric).sum::<f64>() / n,
                mean_average_rank: group.iter().map(|r| r.average_rank).sum::<f64>() / n,
                mean_zero_row_fraction: group.iter().map(|r| r.zero_row_fraction).sum::<f64>() / n,
            }
        })
        .collect()
}

/// Runs the study over `cfg.seeds` and writes `study.csv` and `study_summary.csv` under `out`.
pub fn preliminary_study(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<Vec<StudyRow>> {
    let mut rows = Vec::new();
    for &seed in &cfg.seeds {
        let ctx = SeedContext::prepare(cfg, seed)?;
        rows.extend(study_seed(&ctx, &cfg.study.budgets)?);
    }
    if let Some(dir) = out {
        write_csv(&dir.join("study.csv"), &rows)?;
        write_csv(&dir.join("study_summary.csv"), &summarize_study(&rows))?;
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsityAblationRow {
    pub seed: u64,
    pub v_final: f64,
    pub before: f64,
    pub after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightingAblationRow {
    pub seed: u64,
    pub weighting: Weighting,
    pub before: f64,
    pub after: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinetuneVariant {
    Mixed,
    MixedWithoutConsistency,
    Vanilla,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneAblationRow {
    pub seed: u64,
    pub variant: FinetuneVariant,
    pub metric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PInitAblationRow {
    pub seed: u64,
    pub p_init: f64,
    pub metric: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AblationTables {
    pub sparsity: Vec<SparsityAblationRow>,
    pub weighting: Vec<WeightingAblationRow>,
    pub finetune: Vec<FinetuneAblationRow>,
    pub p_init: Vec<PInitAblationRow>,
}

impl AblationTables {
    fn extend(&mut self, other: AblationTables) {
        self.sparsity.extend(other.sparsity);
        self.weighting.extend(other.weighting);
        self.finetune.extend(other.finetune);
        self.p_init.extend(other.p_init);
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_csv(&dir.join("ablation_sparsity.csv"), &self.sparsity)?;
        write_csv(&dir.join("ablation_weighting.csv"), &self.weighting)?;
        write_csv(&dir.join("ablation_finetune.csv"), &self.finetune)?;
        write_csv(&dir.join("ablation_p_init.csv"), &self.p_init)
    }
}

/// All ablations for one seed. Empty grids skip their ablation.
pub fn ablation_seed(ctx: &SeedContext) -> Result<AblationTables> {
    let cfg = &ctx.cfg;
    let (seed, train) = (ctx.seed, &ctx.train);
    let mut t = AblationTables::default();
    let finetuned = |m: &MlpModel, p: f64, lambda: f64| -> Result<f64> {
        let (m, _) = finetune_stage_with(cfg, seed, m, train, p, lambda).map_err(Error::in_stage("finetune"))?;
        ctx.eval(&m)
    };
    let (p, lambda) = (cfg.finetune.p_init, cfg.finetune.consistency_weight);

    for &v in &cfg.ablation.v_grid {
        let (sparse, _) =
            prune_stage_with(cfg, seed, &ctx.dense, train, cfg.prune.method, v).map_err(Error::in_stage("prune"))?;
        let fac = factorize_stage(cfg, &sparse).map_err(Error::in_stage("factorize"))?;
        t.sparsity.push(SparsityAblationRow {
            seed,
            v_final: v,
            before: ctx.eval(&fac)?,
            after: finetuned(&fac, p, lambda)?,
        });
    }

    let needs_sparse = !cfg.ablation.weightings.is_empty() || !cfg.ablation.p_init_grid.is_empty();
    if !needs_sparse {
        return Ok(t);
    }
    let (sparse, _) = prune_stage(cfg, seed, &ctx.dense, train).map_err(Error::in_stage("prune"))?;
    for &w in &cfg.ablation.weightings {
        let fac = factorize_stage_with(cfg, &sparse, w, cfg.factorize.param_fraction)
            .map_err(Error::in_stage("factorize"))?;
        t.weighting.push(WeightingAblationRow {
            seed,
            weighting: w,
            before: ctx.eval(&fac)?,
            after: finetuned(&fac, p, lambda)?,
        });
    }

    let fac = factorize_stage(cfg, &sparse).map_err(Error::in_stage("factorize"))?;
    for (variant, metric) in [
        (FinetuneVariant::Mixed, finetuned(&fac, p, lambda)?),
        (FinetuneVariant::MixedWithoutConsistency, finetuned(&fac, p, 0.0)?),
        (
            FinetuneVariant::Vanilla,
            ctx.eval(&vanilla_finetune(cfg, seed, &fac, train)?)?,
        ),
    ] {
        t.finetune.push(FinetuneAblationRow { seed, variant, metric });
    }
    for &p_init in &cfg.ablation.p_init_grid {
        t.p_init.push(PInitAblationRow {
            seed,
            p_init,
            metric: finetuned(&fac, p_init, lambda)?,
        });
    }
    Ok(t)
}

/// Runs every ablation over `cfg.seeds`, writing one CSV per ablation under `out`.
pub fn ablation_suite(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<AblationTables> {
    let mut all = AblationTables::default();
    for &seed in &cfg.seeds {
        let ctx = SeedContext::prepare(cfg, seed)?;
        all.extend(ablation_seed(&ctx)?);
    }
    if let Some(dir) = out {
        all.write(dir)?;
    }
    Ok(all)
}
