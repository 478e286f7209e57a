mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::tiny_config;
use lpaf::io::load_checkpoint;

fn lpaf(args: &[&str], cfg: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lpaf"))
        .args(args)
        .arg("--config")
        .arg(cfg)
        .output()
        .unwrap()
}

fn ok(out: Output) -> serde_json::Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(out.status.success(), "stderr: {stderr}");
    serde_json::from_slice(&out.stdout).unwrap()
}

fn setup() -> (tempfile::TempDir, std::path::PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("config.json");
    std::fs::write(&cfg, serde_json::to_string(&tiny_config()).unwrap()).unwrap();
    (dir, cfg)
}

#[test]
fn stage_commands_chain_into_the_pipeline_result() {
    let (dir, cfg) = setup();
    let d = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    ok(lpaf(&["train", "--out", &d("dense")], &cfg));
    ok(lpaf(
        &["prune", "--checkpoint", &d("dense"), "--out", &d("sparse")],
        &cfg,
    ));
    ok(lpaf(
        &["factorize", "--checkpoint", &d("sparse"), "--out", &d("fac")],
        &cfg,
    ));
    let last = ok(lpaf(
        &["finetune", "--checkpoint", &d("fac"), "--out", &d("final")],
        &cfg,
    ));
    let whole = ok(lpaf(&["pipeline", "--out", &d("run")], &cfg));
    assert_eq!(last["metric"], whole["metric"]);
    assert_eq!(
        load_checkpoint(&dir.path().join("final")).unwrap(),
        load_checkpoint(&dir.path().join("run/final")).unwrap()
    );
    for f in [
        "final/report.json",
        "final/stats.csv",
        "final/finetune_log.csv",
        "sparse/prune_events.csv",
        "run/report.json",
    ] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }

    let stats = ok(lpaf(&["stats", "--checkpoint", &d("final")], &cfg));
    assert_eq!(stats["layers"][0]["kind"], "factorized");
    let pattern = ok(lpaf(
        &[
            "export-pattern",
            "--layer",
            "1",
            "--checkpoint",
            &d("sparse"),
            "--out",
            &d("pattern"),
        ],
        &cfg,
    ));
    assert!(pattern["nonzero_rows"].as_u64().unwrap() <= 16);
    let pgm = std::fs::read_to_string(dir.path().join("pattern/layer1.pgm")).unwrap();
    assert!(pgm.starts_with("P2\n16 16\n1\n"));
}

#[test]
fn seed_flag_changes_the_run() {
    let (dir, cfg) = setup();
    let d = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    ok(lpaf(&["train", "--seed", "0", "--out", &d("a")], &cfg));
    ok(lpaf(&["train", "--seed", "5", "--out", &d("b")], &cfg));
    ok(lpaf(&["train", "--seed", "5", "--out", &d("c")], &cfg));
    let load = |n: &str| load_checkpoint(&dir.path().join(n)).unwrap();
    assert_ne!(load("a"), load("b"));
    assert_eq!(load("b"), load("c"));
}

#[test]
fn suites_emit_csv_and_report() {
    let (dir, cfg) = setup();
    let d = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    ok(lpaf(&["study", "--out", &d("study")], &cfg));
    ok(lpaf(&["ablate", "--out", &d("ablate")], &cfg));
    for f in [
        "study/study.csv",
        "study/report.json",
        "ablate/ablation_weighting.csv",
        "ablate/report.json",
    ] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }
}

#[test]
fn failures_exit_nonzero_with_one_json_line() {
    let (dir, cfg) = setup();
    let missing = dir.path().join("nothing");
    let out = lpaf(&["stats", "--checkpoint", missing.to_str().unwrap()], &cfg);
    assert!(!out.status.success());
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert_eq!(stderr.trim_end().lines().count(), 1);
    let err: serde_json::Value = serde_json::from_str(stderr.trim()).unwrap();
    assert_eq!(err["error"], "io");

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"prune": {"v_final": 0}}"#).unwrap();
    let out = lpaf(&["train"], &bad);
    assert!(!out.status.success());
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "config");
    assert!(err["message"].as_str().unwrap().contains("prune.v_final"));

    let out = lpaf(&["prune"], &cfg);
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "invalid_argument");
}
