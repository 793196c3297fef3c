use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn coin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_coin"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = coin(args);
    assert!(
        out.status.success(),
        "coin {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn write_config(dir: &Path) -> String {
    let cfg = serde_json::json!({
        "seed": 4,
        "data": {"n_train": 80, "n_dev": 40, "n_test": 10},
        "encoder": {"d_model": 16, "n_layers": 1, "n_heads": 2, "d_ffn": 32, "max_len": 48},
        "detector": {"train": {"epochs": 1}},
        "corrector": {"train": {"epochs": 1}},
        "experiment": {"seeds": [0]},
        "artifacts": {
            "detector": dir.join("det.ckpt"),
            "corrector": dir.join("cor.ckpt"),
            "calibration": dir.join("cal.json")
        }
    });
    let path = dir.join("cfg.json");
    fs::write(&path, cfg.to_string()).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn full_workflow_from_synthesis_to_correction() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = write_config(d);
    let data = d.join("data");
    let data_s = data.to_str().unwrap();

    ok(&["synth", "--config", &cfg, "--out", data_s]);
    for f in ["train.tsv", "dev.tsv", "test.tsv", "confusion.txt"] {
        assert!(data.join(f).exists(), "{f} missing");
    }
    let train = data.join("train.tsv");
    let dev = data.join("dev.tsv");
    let test = data.join("test.tsv");
    ok(&["train-detector", "--config", &cfg, "--train", train.to_str().unwrap()]);
    let cal = ok(&["calibrate", "--config", &cfg, "--dev", dev.to_str().unwrap()]);
    let cal: serde_json::Value = serde_json::from_str(&cal).unwrap();
    assert!(cal["p"].as_f64().unwrap() >= cal["r"].as_f64().unwrap());
    ok(&["train-corrector", "--config", &cfg, "--train", train.to_str().unwrap()]);

    let out = d.join("corrected.tsv");
    ok(&["correct", "--config", &cfg, "--input", test.to_str().unwrap(), "--output", out.to_str().unwrap()]);
    let sources: Vec<String> = fs::read_to_string(&test)
        .unwrap()
        .lines()
        .map(|l| l.split('\t').next().unwrap().to_string())
        .collect();
    let lines: Vec<String> = fs::read_to_string(&out).unwrap().lines().map(String::from).collect();
    assert_eq!(lines.len(), sources.len());
    for (line, src) in lines.iter().zip(&sources) {
        let (s, pred) = line.split_once('\t').unwrap();
        assert_eq!(s, src);
        assert_eq!(pred.chars().count(), src.chars().count());
    }
}

#[test]
fn experiment_writes_report_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = dir.path().join("reports");
    let stdout = ok(&["experiment", "--config", &cfg, "--id", "mask_length_sweep", "--out", out.to_str().unwrap()]);
    assert!(stdout.contains("mask_length_sweep"));
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("mask_length_sweep.json")).unwrap()).unwrap();
    assert_eq!(json["schema_version"], 1);
    assert_eq!(json["cells"].as_array().unwrap().len(), 5);
    assert!(out.join("mask_length_sweep.txt").exists());
}

#[test]
fn unknown_experiment_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = coin(&["experiment", "--id", "table9", "--out", dir.path().to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown experiment"));
}

#[test]
fn missing_artifact_path_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.txt");
    fs::write(&input, "abc\n").unwrap();
    let out = coin(&["correct", "--input", input.to_str().unwrap(), "--output", "/dev/null"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--detector"));
}
