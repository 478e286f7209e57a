mod common;

use common::tiny_config;
use lpaf::io::{load_checkpoint, load_dataset};
use lpaf::nn::{evaluate, LayerKind};
use lpaf::pipeline::{finetune_stage, lpaf_run, RunReport};

#[test]
fn final_model_is_reproducible_from_the_factorized_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config();
    let run = lpaf_run(&cfg, Some(dir.path())).unwrap();
    let (train, _) = load_dataset(&cfg.dataset).unwrap();
    let factorized = load_checkpoint(&dir.path().join("factorized")).unwrap();
    let (again, _) = finetune_stage(&cfg, cfg.seed, &factorized, &train).unwrap();
    assert_eq!(again, run.model);
    assert_eq!(again, load_checkpoint(&dir.path().join("final")).unwrap());
}

#[test]
fn reported_metrics_match_the_saved_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config();
    lpaf_run(&cfg, Some(dir.path())).unwrap();
    let text = std::fs::read_to_string(dir.path().join("report.json")).unwrap();
    let report: RunReport = serde_json::from_str(&text).unwrap();
    let (_, test) = load_dataset(&cfg.dataset).unwrap();
    assert_eq!(report.stages.len(), 4);
    for stage in &report.stages {
        let model = load_checkpoint(stage.checkpoint.as_ref().unwrap()).unwrap();
        let metric = evaluate(&model, &test).unwrap();
        assert!(
            (metric - stage.metric).abs() <= 1e-12,
            "{}: {metric} vs {}",
            stage.stage,
            stage.metric
        );
    }
}

#[test]
fn factorization_keeps_biases_and_finetuning_keeps_shadow_sparsity() {
    let run = lpaf_run(&tiny_config(), None).unwrap();
    for (s, f) in run.sparse.layers.iter().zip(&run.factorized.layers) {
        assert_eq!(s.bias, f.bias);
    }
    let mut factorized_layers = 0;
    for (before, after) in run.factorized.layers.iter().zip(&run.model.layers) {
        let (
            LayerKind::Factorized {
                shadow: s0,
                shadow_mask: m0,
                ..
            },
            LayerKind::Factorized {
                shadow: s1,
                shadow_mask: m1,
                ..
            },
        ) = (&before.kind, &after.kind)
        else {
            continue;
        };
        factorized_layers += 1;
        assert_eq!(m0, m1);
        for ((a, b), m) in s0.as_slice().iter().zip(s1.as_slice()).zip(m0.as_slice()) {
            if *m == 0.0 {
                assert_eq!((*a, *b), (0.0, 0.0));
            }
        }
    }
    assert_eq!(factorized_layers, 2);
}

#[test]
fn suites_write_their_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config();
    let rows = lpaf::pipeline::preliminary_study(&cfg, Some(dir.path())).unwrap();
    assert_eq!(rows.len(), 4);
    lpaf::pipeline::ablation_suite(&cfg, Some(dir.path())).unwrap();
    for name in [
        "study.csv",
        "study_summary.csv",
        "ablation_sparsity.csv",
        "ablation_weighting.csv",
        "ablation_finetune.csv",
        "ablation_p_init.csv",
    ] {
        let text = std::fs::read_to_string(dir.path().join(name)).unwrap();
        assert!(text.lines().count() >= 2, "{name} has no rows");
    }
}
