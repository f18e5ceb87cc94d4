use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_motionseg"))
        .args(args)
        .env("RUST_LOG", "warn")
        .env_remove("GM_DATA_DIR")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = bin(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn exit_codes() {
    assert_eq!(bin(&["--help"]).status.code(), Some(0));
    assert_eq!(bin(&["--version"]).status.code(), Some(0));
    assert_eq!(bin(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(bin(&["train", "--steps", "many", "--data", "/x"]).status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope");
    let out = bin(&["eval", "--data", p(&missing), "--checkpoint", p(&missing.join("c.seg"))]);
    assert_eq!(out.status.code(), Some(2));
}

fn small_dataset(root: &Path) {
    ok(&[
        "gen-dataset", "--out", p(root), "--videos", "4", "--test-fraction", "0.25", "--height", "24",
        "--width", "24", "--frames", "11", "--seed", "3",
    ]);
}

fn train_args<'a>(data: &'a str, out: &'a str) -> Vec<&'a str> {
    vec![
        "train", "--data", data, "--out", out, "--motion", "flow_multiscale", "--scales", "2", "--features", "2",
        "--steps", "3", "--batch", "2",
    ]
}

#[test]
fn generate_train_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    small_dataset(&data);
    let run = dir.path().join("run");
    ok(&train_args(p(&data), p(&run)));
    assert!(run.join("checkpoint.seg").exists() && run.join("run.json").exists());

    let echo: toml::Table = fs::read_to_string(run.join("train.toml")).unwrap().parse().unwrap();
    assert_eq!(echo["seed"].as_integer(), Some(0));
    assert_eq!(echo["train"]["steps"].as_integer(), Some(3));
    assert_eq!(echo["train"]["lr"].as_float(), Some(1e-4));
    assert_eq!(echo["train"]["motion"].as_str(), Some("flow_multiscale"));

    let eval = dir.path().join("eval");
    let out = ok(&[
        "eval", "--data", p(&data), "--checkpoint", p(&run.join("checkpoint.seg")), "--out", p(&eval), "--name", "lk",
    ]);
    let csv = fs::read_to_string(eval.join("results.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("model,condition,video,frame,iou,f_score"));
    // one test video, frames 4..7, two conditions
    assert_eq!(lines.count(), 2 * 3);
    assert!(String::from_utf8_lossy(&out.stdout).contains("dots IoU"));

    let merged = dir.path().join("merged");
    ok(&["report", p(&eval.join("results.csv")), "--out", p(&merged)]);
    assert!(merged.join("summary.txt").exists());
}

#[test]
fn train_defaults_are_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    small_dataset(&data);
    // steps come from the config file; everything else keeps its default
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "[train]\nsteps = 1\nfeatures = 2\nscales = 2\nmotion = \"flow_multiscale\"\n").unwrap();
    let run = dir.path().join("run");
    ok(&["--config", p(&cfg), "train", "--data", p(&data), "--out", p(&run)]);
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("run.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["steps"], 1);
    assert_eq!(manifest["config"]["batch"], 8);
    assert_eq!(manifest["config"]["adam"]["lr"], 1e-4);
    let echo: toml::Table = fs::read_to_string(run.join("train.toml")).unwrap().parse().unwrap();
    assert_eq!(echo["train"]["batch"].as_integer(), Some(8));
    assert_eq!(echo["train"]["features"].as_integer(), Some(2));
}

#[test]
fn outputs_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let mut checkpoints = Vec::new();
    for (i, threads) in ["1", "2"].iter().enumerate() {
        let data = dir.path().join(format!("data{i}"));
        small_dataset(&data);
        let run = dir.path().join(format!("run{i}"));
        let mut args = vec!["--threads", threads];
        args.extend(train_args(p(&data), p(&run)));
        ok(&args);
        checkpoints.push((
            fs::read(data.join("manifest.txt")).unwrap(),
            fs::read(run.join("checkpoint.seg")).unwrap(),
        ));
    }
    assert!(checkpoints[0] == checkpoints[1]);
}

#[test]
fn shape_trial_bank() {
    let dir = tempfile::tempdir().unwrap();
    let bank = dir.path().join("bank");
    ok(&["gen-shape-trials", "--out", p(&bank), "--trials", "3", "--height", "24", "--width", "24", "--frames", "10"]);
    let entries: serde_json::Value = serde_json::from_str(&fs::read_to_string(bank.join("bank.json")).unwrap()).unwrap();
    assert_eq!(entries["entries"].as_array().map(Vec::len), Some(3));
}
