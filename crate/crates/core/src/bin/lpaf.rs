use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use lpaf::analysis::{model_stats_with_tol, sparsity_pattern_export, ModelStats};
use lpaf::io::{
    load_checkpoint, load_config, load_dataset, save_checkpoint, write_csv, write_json, write_text, ExperimentConfig,
};
use lpaf::nn::{evaluate, MlpModel};
use lpaf::pipeline::{
    ablation_suite, dense_stage, factorize_stage, finetune_stage, lpaf_run, metric_name, preliminary_study,
    prune_stage, summarize_study,
};
use lpaf::{Error, Result};

#[derive(Parser)]
#[command(
    name = "lpaf",
    version,
    about = "Low-rank prune-and-factorize compression for small MLPs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON); defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the run seed (and the suite seed list).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Input checkpoint directory.
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train the dense model.
    Train,
    /// Step 1: prune a dense checkpoint.
    Prune,
    /// Step 2: factorize a sparse checkpoint.
    Factorize,
    /// Step 3: mixed-rank fine-tune a factorized checkpoint.
    Finetune,
    /// All stages end to end.
    Pipeline,
    /// Accuracy and rank of SVD_Ft, UP_zero and UP_first over parameter budgets.
    Study,
    /// Sparsity, weighting, consistency-loss and p_init ablations.
    Ablate,
    /// Per-layer statistics of a checkpoint.
    Stats,
    /// Mask of a sparse layer as a PGM image plus a row histogram.
    ExportPattern {
        #[arg(long)]
        layer: usize,
    },
}

#[derive(Serialize)]
struct StageOutput<'a> {
    command: &'a str,
    seed: u64,
    metric_name: &'a str,
    metric: f64,
    checkpoint: &'a Path,
    stats: ModelStats,
}

fn config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => load_config(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
        cfg.seeds = vec![s];
    }
    Ok(cfg)
}

fn input(common: &Common) -> Result<MlpModel> {
    let dir = common
        .checkpoint
        .as_deref()
        .ok_or_else(|| Error::InvalidArgument("--checkpoint is required".into()))?;
    load_checkpoint(dir)
}

fn finish_stage(command: &str, cfg: &ExperimentConfig, out: &Path, model: &MlpModel) -> Result<()> {
    let (_, test) = load_dataset(&cfg.dataset)?;
    save_checkpoint(model, out)?;
    let stats = model_stats_with_tol(model, cfg.study.rank_tol)?;
    write_csv(&out.join("stats.csv"), &stats.layers)?;
    let report = StageOutput {
        command,
        seed: cfg.seed,
        metric_name: metric_name(model.task),
        metric: evaluate(model, &test)?,
        checkpoint: out,
        stats,
    };
    write_json(&out.join("report.json"), &report)?;
    println!(
        "{}",
        serde_json::to_string(&serde_json::json!({
            "command": command, "metric": report.metric, "out": out,
        }))?
    );
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let common = &cli.common;
    let cfg = config(common)?;
    let name = match &cli.command {
        Command::Train => "train",
        Command::Prune => "prune",
        Command::Factorize => "factorize",
        Command::Finetune => "finetune",
        Command::Pipeline => "pipeline",
        Command::Study => "study",
        Command::Ablate => "ablate",
        Command::Stats => "stats",
        Command::ExportPattern { .. } => "export-pattern",
    };
    let out = common.out.clone().unwrap_or_else(|| cfg.out_dir.join(name));
    match cli.command {
        Command::Train => {
            let (train, _) = load_dataset(&cfg.dataset)?;
            let model = dense_stage(&cfg, cfg.seed, &train)?;
            finish_stage(name, &cfg, &out, &model)
        }
        Command::Prune => {
            let dense = input(common)?;
            let (train, _) = load_dataset(&cfg.dataset)?;
            let (model, events) = prune_stage(&cfg, cfg.seed, &dense, &train)?;
            write_csv(&out.join("prune_events.csv"), &events)?;
            finish_stage(name, &cfg, &out, &model)
        }
        Command::Factorize => {
            let model = factorize_stage(&cfg, &input(common)?)?;
            finish_stage(name, &cfg, &out, &model)
        }
        Command::Finetune => {
            let fac = input(common)?;
            let (train, _) = load_dataset(&cfg.dataset)?;
            let (model, log) = finetune_stage(&cfg, cfg.seed, &fac, &train)?;
            write_csv(&out.join("finetune_log.csv"), &log)?;
            finish_stage(name, &cfg, &out, &model)
        }
        Command::Pipeline => {
            let run = lpaf_run(&cfg, Some(&out))?;
            let last = run.report.stages.last().map_or(f64::NAN, |s| s.metric);
            println!("{}", serde_json::json!({"command": name, "metric": last, "out": out}));
            Ok(())
        }
        Command::Study => {
            let rows = preliminary_study(&cfg, Some(&out))?;
            let summary = summarize_study(&rows);
            write_json(
                &out.join("report.json"),
                &serde_json::json!({
                    "command": name, "seeds": cfg.seeds, "summary": summary, "config": cfg,
                }),
            )?;
            println!(
                "{}",
                serde_json::json!({"command": name, "rows": rows.len(), "out": out})
            );
            Ok(())
        }
        Command::Ablate => {
            let tables = ablation_suite(&cfg, Some(&out))?;
            write_json(
                &out.join("report.json"),
                &serde_json::json!({
                    "command": name, "seeds": cfg.seeds, "tables": tables, "config": cfg,
                }),
            )?;
            println!("{}", serde_json::json!({"command": name, "out": out}));
            Ok(())
        }
        Command::Stats => {
            let model = input(common)?;
            let stats = model_stats_with_tol(&model, cfg.study.rank_tol)?;
            if common.out.is_some() {
                write_csv(&out.join("stats.csv"), &stats.layers)?;
                write_json(&out.join("report.json"), &stats)?;
            }
            println!("{}", serde_json::to_string(&stats)?);
            Ok(())
        }
        Command::ExportPattern { layer } => {
            let model = input(common)?;
            let l = model
                .layers
                .get(layer)
                .ok_or_else(|| Error::InvalidArgument(format!("layer {layer} does not exist")))?;
            let pattern = sparsity_pattern_export(l)?;
            write_text(&out.join(format!("layer{layer}.pgm")), &pattern.pgm)?;
            write_text(&out.join(format!("layer{layer}_rows.csv")), &pattern.histogram_csv())?;
            write_json(
                &out.join("report.json"),
                &serde_json::json!({
                    "command": name, "layer": layer, "nonzero_rows": pattern.nonzero_rows(),
                    "rows": pattern.row_counts.len(),
                }),
            )?;
            println!(
                "{}",
                serde_json::json!({"command": name, "nonzero_rows": pattern.nonzero_rows(), "out": out})
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = serde_json::json!({"error": e.kind(), "message": e.to_string()});
            eprintln!("{line}");
            ExitCode::FAILURE
        }
    }
}
