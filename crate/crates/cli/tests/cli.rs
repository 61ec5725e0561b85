use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use chrono::{TimeZone, Utc};
use powernet::dataio::synth::sinusoid_dataset;
use powernet::dataio::AlignedDataset;

fn powernet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_powernet"))
        .args(args)
        .env("RUST_LOG", "warn")
        .env_remove("POWERNET_OUT")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = powernet(args);
    assert!(
        out.status.success(),
        "`powernet {}` failed: {}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

/// Synthetic fixture of `days` days ingested into one aggregate dataset.
fn fixture(root: &Path, days: usize) -> PathBuf {
    let fx = root.join("fx");
    let data = root.join("data");
    ok(&["synth", "--days", &days.to_string(), "--out", &s(&fx)]);
    ok(&[
        "ingest",
        "--consumption",
        &s(&fx.join("apartments")),
        "--weather",
        &s(&fx.join("weather.csv")),
        "--aggregate",
        "--out",
        &s(&data),
    ]);
    data.join("dataset.csv")
}

fn quick_train(root: &Path, dataset: &Path, extra: &[&str]) -> PathBuf {
    let out = root.join("model");
    let mut args = vec![
        "train",
        "--dataset",
        dataset.to_str().unwrap(),
        "--memory-size",
        "8",
        "--max-epochs",
        "3",
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    ok(&args);
    out.join("checkpoint.json")
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn ingest_writes_dataset_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let ds = fixture(dir.path(), 3);
    let d = AlignedDataset::load(&ds).unwrap();
    assert_eq!(d.len(), 72);
    let report = json(&dir.path().join("data/ingest_report.json"));
    assert_eq!(report["files"].as_array().unwrap().len(), 3);
    assert_eq!(report["datasets"][0]["align"]["aligned"], 72);
}

#[test]
fn aggregate_is_the_sum_of_apartments() {
    let dir = tempfile::tempdir().unwrap();
    let ds = fixture(dir.path(), 2);
    let fx = dir.path().join("fx");
    let per = dir.path().join("per");
    ok(&[
        "ingest",
        "--consumption",
        &s(&fx.join("apartments")),
        "--weather",
        &s(&fx.join("weather.csv")),
        "--out",
        &s(&per),
    ]);
    let total = AlignedDataset::load(&ds).unwrap();
    let parts: Vec<AlignedDataset> = (1..=3)
        .map(|i| AlignedDataset::load(per.join(format!("datasets/apt_{i:03}.csv"))).unwrap())
        .collect();
    for (k, row) in total.rows().iter().enumerate() {
        let sum: f64 = parts.iter().map(|p| p.rows()[k].consumption).sum();
        assert!((row.consumption - sum).abs() < 1e-9);
    }
}

#[test]
fn missing_weather_exits_2_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let fx = dir.path().join("fx");
    ok(&["synth", "--days", "1", "--out", &s(&fx)]);
    let out_dir = dir.path().join("out");
    let out = powernet(&[
        "ingest",
        "--consumption",
        &s(&fx.join("apartments")),
        "--weather",
        &s(&dir.path().join("absent.csv")),
        "--out",
        &s(&out_dir),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("weather"));
    assert!(!out_dir.exists());
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(powernet(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(powernet(&["train", "--splits", "1:2"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"train": {"learning_rat": 0.1}}"#).unwrap();
    let out = powernet(&["--config", &s(&cfg), "synth", "--out", &s(&dir.path().join("x"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rat"));
    assert_eq!(powernet(&["evaluate", "--checkpoint", "nope.json"]).status.code(), Some(2));
}

#[test]
fn output_dir_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let env_dir = dir.path().join("from-env");
    let out = Command::new(env!("CARGO_BIN_EXE_powernet"))
        .args(["synth", "--days", "1"])
        .env("POWERNET_OUT", &env_dir)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(env_dir.join("weather.csv").is_file());
}

#[test]
fn splits_follow_the_flag_and_config_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let ds = fixture(dir.path(), 30);
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"train": {"splits": {"train": 600, "validation": 60, "test": 60}}}"#).unwrap();
    let ck = quick_train(dir.path(), &ds, &["--config", &s(&cfg), "--splits", "624:48:48"]);
    let ck_json = json(&ck);
    assert_eq!(ck_json["hyperparameters"]["splits"]["train"], 624);
    assert_eq!(ck_json["hyperparameters"]["splits"]["validation"], 48);
    ok(&["evaluate", "--checkpoint", &s(&ck), "--dataset", &s(&ds), "--out", &s(dir.path())]);
    let eval = json(&dir.path().join("evaluation.json"));
    // the first window of the training split has no history
    assert_eq!(eval["model"]["train"]["hours"], 624 - 24);
    assert_eq!(eval["model"]["validation"]["hours"], 48);
    assert_eq!(eval["model"]["test"]["hours"], 48);
    assert!(eval["persistence"]["test"]["mse"].as_f64().unwrap() > 0.0);

    // splits longer than the data are an input error
    let out = powernet(&["train", "--dataset", &s(&ds), "--splits", "700:48:48", "--out", &s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn forecast_and_anomaly_reports() {
    let dir = tempfile::tempdir().unwrap();
    let ds = fixture(dir.path(), 60);
    let ck = quick_train(dir.path(), &ds, &[]);
    let out = dir.path().join("fc");
    ok(&[
        "forecast", "--checkpoint", &s(&ck), "--dataset", &s(&ds), "--mode", "recursive", "--horizon", "720",
        "--thresholds", "10,11,13", "--out", &s(&out),
    ]);
    let csv = std::fs::read_to_string(out.join("forecast.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("hour,time,actual,predicted"));
    assert_eq!(lines.count(), 720);
    let summary = json(&out.join("forecast_summary.json"));
    assert_eq!(summary["start"], "2016-06-29T05:00:00Z");
    let crossings = std::fs::read_to_string(out.join("retraining.csv")).unwrap();
    assert_eq!(crossings.lines().count(), 4);

    let an = dir.path().join("an");
    ok(&["anomaly", "--checkpoint", &s(&ck), "--dataset", &s(&ds), "--thetas", "0.1..0.9", "--out", &s(&an)]);
    let sweep = std::fs::read_to_string(an.join("theft_sweep.csv")).unwrap();
    let rows: Vec<&str> = sweep.lines().collect();
    assert_eq!(rows[0], "theta,mape");
    assert_eq!(rows.len(), 10);
    assert!(rows[1].starts_with("0.1,") && rows[9].starts_with("0.9,"));
    let summary = json(&an.join("anomaly.json"));
    assert_eq!(summary["detect_theta"], 0.5);
}

#[test]
fn gbt_bundle_round_trips_through_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let ds = fixture(dir.path(), 30);
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"gbt": {"n_estimators": [10, 20], "max_depth": [2], "learning_rate": [0.1, 1.0]}}"#)
        .unwrap();
    let out = dir.path().join("gbt");
    ok(&["--config", &s(&cfg), "train", "--model", "gbt", "--dataset", &s(&ds), "--out", &s(&out)]);
    let grid = std::fs::read_to_string(out.join("gbt_grid.csv")).unwrap();
    assert_eq!(grid.lines().count(), 1 + 4);
    ok(&[
        "evaluate", "--model", "gbt", "--checkpoint", &s(&out.join("gbt_model.json")), "--dataset", &s(&ds),
        "--out", &s(&out),
    ]);
    assert!(json(&out.join("evaluation.json"))["model"]["test"]["mape"].as_f64().unwrap() > 0.0);
    // a tree bundle is not a checkpoint
    let wrong = powernet(&["evaluate", "--checkpoint", &s(&out.join("gbt_model.json")), "--dataset", &s(&ds)]);
    assert_eq!(wrong.status.code(), Some(2));
}

#[test]
fn feature_spec_version_mismatch_is_explicit() {
    let dir = tempfile::tempdir().unwrap();
    let ds = fixture(dir.path(), 30);
    let ck = quick_train(dir.path(), &ds, &[]);
    let mut v = json(&ck);
    v["feature_spec"]["format_version"] = 99.into();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, v.to_string()).unwrap();
    let out = powernet(&["evaluate", "--checkpoint", &s(&bad), "--dataset", &s(&ds), "--out", &s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("feature spec has version 99"));
}

#[test]
fn grid_search_reports_every_cell() {
    let dir = tempfile::tempdir().unwrap();
    let ds = fixture(dir.path(), 30);
    let out = dir.path().join("grid");
    ok(&[
        "grid-search", "--dataset", &s(&ds), "--memory-grid", "4,6", "--max-epochs", "2", "--out", &s(&out),
    ]);
    let report = json(&out.join("grid_report.json"));
    assert_eq!(report["cells"].as_array().unwrap().len(), 2);
    let best = report["best_memory_size"].as_u64().unwrap();
    assert_eq!(json(&out.join("checkpoint.json"))["architecture"]["memory_size"], best);
}

#[test]
fn converged_run_fits_training_split_better_than_validation() {
    let dir = tempfile::tempdir().unwrap();
    let start = Utc.with_ymd_and_hms(2016, 6, 1, 0, 0, 0).unwrap();
    let ds = dir.path().join("sin.csv");
    sinusoid_dataset(start, 720, 24.0, 2.0, 1.0, 0.05, 7).save(&ds).unwrap();
    let out = dir.path().join("m");
    ok(&["train", "--dataset", &s(&ds), "--memory-size", "16", "--max-epochs", "100", "--out", &s(&out)]);
    ok(&["evaluate", "--checkpoint", &s(&out.join("checkpoint.json")), "--dataset", &s(&ds), "--out", &s(&out)]);
    let eval = json(&out.join("evaluation.json"));
    let train = eval["model"]["train"]["mape"].as_f64().unwrap();
    let val = eval["model"]["validation"]["mape"].as_f64().unwrap();
    assert!(train < val, "train MAPE {train} vs validation {val}");
}

#[test]
fn auto_window_records_the_selection() {
    let dir = tempfile::tempdir().unwrap();
    let ds = fixture(dir.path(), 30);
    let out = dir.path().join("auto");
    ok(&[
        "train", "--dataset", &s(&ds), "--window", "auto", "--memory-size", "4", "--max-epochs", "1", "--out",
        &s(&out),
    ]);
    let sel = json(&out.join("window_selection.json"));
    let n = sel["selection"]["n"].as_u64().unwrap();
    assert!(n >= 1);
    assert_eq!(json(&out.join("checkpoint.json"))["feature_spec"]["window_len"], n);
}
