//! The `endoscrub` binary end to end on a tiny corpus.

use std::path::Path;
use std::process::{Command, Output};

use endoscrub::dataset::{ClassLabel, Corpus};
use endoscrub::eval::{ConfusionMatrix, MetricsReport};
use endoscrub::experiment::RunRecord;
use endoscrub::scrub::EditList;

const BIN: &str = env!("CARGO_BIN_EXE_endoscrub");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn write_config(dir: &Path) -> String {
    let text = format!(
        r#"seed = 2
run_root = "{runs}"
[corpus]
root = "{corpus}"
[synth]
n_videos = 5
duration_s = [8, 12]
height = 72
width = 128
[folds]
n_folds = 2
ratios = [0.4, 0.2, 0.4]
[model]
kind = "small-residual"
feature_dim = 16
input_size = 32
stem_pool = 2
[pipeline]
crop_size = 64
input_size = 32
[pipeline.augment]
output_size = 32
"#,
        runs = dir.join("runs").display(),
        corpus = dir.join("corpus").display()
    );
    let path = dir.join("c.toml");
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn oracle_evaluation_and_scrub() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let corpus = dir.path().join("corpus");
    ok(&["synth", "-c", &cfg, "--out", corpus.to_str().unwrap()]);
    ok(&["folds", "-c", &cfg]);
    assert!(dir.path().join("runs/folds/fold_1.json").is_file());

    let oracle = dir.path().join("oracle/checkpoint.bin");
    ok(&["make-oracle", "--out", oracle.to_str().unwrap()]);
    ok(&[
        "evaluate",
        "-c",
        &cfg,
        "--ckpt",
        oracle.to_str().unwrap(),
        "--fold",
        "0",
    ]);
    let report = MetricsReport::load(&dir.path().join("oracle/eval_test/metrics.json")).unwrap();
    assert_eq!(report.mf1, 100.0);
    assert_eq!(report.confusion.fp + report.confusion.fn_, 0);

    let loaded = Corpus::load(
        &corpus.join("manifest.json"),
        &corpus.join("annotations.csv"),
        &corpus.join("frames"),
    )
    .unwrap();
    let id = loaded.videos[0].video_id.clone();
    let out = dir.path().join("scrubbed");
    ok(&[
        "scrub",
        "-c",
        &cfg,
        "--ckpt",
        oracle.to_str().unwrap(),
        "--video",
        &id,
        "--margin",
        "0",
        "--out",
        out.to_str().unwrap(),
    ]);
    let edl = EditList::load(&out.join("edit_list.json")).unwrap();
    let irrelevant: u32 = loaded
        .segments(&id)
        .iter()
        .filter(|s| s.label == ClassLabel::Irrelevant)
        .map(|s| s.len())
        .sum();
    assert_eq!(edl.removed_seconds(), irrelevant);
    assert!(out.join("audit.json").is_file());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    // unknown subcommand is a usage error
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "sed = 1\n").unwrap();
    let out = run(&["folds", "-c", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["exit_code"], 2);

    let out = run(&["finetune", "-c", &cfg, "--fold", "0", "--fraction", "1.5"]);
    assert_eq!(out.status.code(), Some(2));

    // no corpus on disk yet
    let out = run(&["folds", "-c", &cfg]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn report_aggregates_folds() {
    let dir = tempfile::tempdir().unwrap();
    let runs = dir.path().join("runs");
    for (fold, v) in [96.0, 97.0, 98.0, 99.0, 100.0].into_iter().enumerate() {
        let run_dir = runs.join(format!("fold_{fold}/ssl_5pct"));
        RunRecord {
            method: "ssl".into(),
            fraction: Some(0.05),
            fold_id: fold as u32,
            seed: 0,
            config_hash: String::new(),
            inputs: Default::default(),
        }
        .save(&run_dir)
        .unwrap();
        let mut m = MetricsReport::from_confusion(
            fold as u32,
            "test",
            ConfusionMatrix {
                tp: 1,
                fp: 0,
                fn_: 0,
                tn: 1,
            },
        );
        m.mf1 = v;
        m.save(&run_dir.join("eval_test/metrics.json")).unwrap();
    }
    ok(&["report", "--runs", runs.to_str().unwrap()]);
    let table = std::fs::read_to_string(runs.join("table_test.csv")).unwrap();
    assert!(table.contains("98.00 (±1.58)"), "{table}");
    assert!(table.starts_with("method,"));
}
