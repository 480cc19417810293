use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_infiniteboost"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn infiniteboost")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Deterministic regression rows. `label` is a 0/1 target for logloss runs
/// and an ordinary feature otherwise.
fn write_csv(dir: &TempDir, name: &str, n: usize, offset: usize) -> PathBuf {
    let mut text = String::from("a,b,c,target,label\n");
    for i in 0..n {
        let k = (i + offset) as f64;
        let (a, b, c) = ((k * 0.37).sin(), (k * 0.11).cos(), (k * 0.73) % 1.0);
        let y = 2.0 * a + b * b - c;
        let _ = writeln!(text, "{a},{b},{c},{y},{}", u8::from(a + b > 0.3));
    }
    let path = dir.path().join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn lines(bytes: &[u8]) -> Vec<f64> {
    String::from_utf8_lossy(bytes).lines().map(|l| l.parse().unwrap()).collect()
}

#[test]
fn adaptive_train_writes_manifest_with_initial_capacity() {
    let dir = TempDir::new().unwrap();
    let data = write_csv(&dir, "train.csv", 200, 0);
    let model = dir.path().join("model.json");
    ok(&["train", "--data", s(&data), "--mode", "infinite-adaptive", "--trees", "20", "--model", s(&model)]);
    let manifest = read_json(&dir.path().join("model.manifest.json"));
    assert_eq!(manifest["initial_capacity"], 0.5);
    assert_eq!(manifest["command"], "train");
    assert_eq!(manifest["inputs"][0]["rows"], 200);
    assert_eq!(manifest["inputs"][0]["sha256"].as_str().unwrap().len(), 64);
    assert!(manifest["parameters"]["final_capacity"].as_f64().unwrap() > 0.0);
}

#[test]
fn missing_shrinkage_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let data = write_csv(&dir, "train.csv", 50, 0);
    let model = dir.path().join("model.json");
    let out = run(&["train", "--data", s(&data), "--mode", "gb", "--trees", "5", "--model", s(&model)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--shrinkage"));
    assert!(!model.exists());
}

#[test]
fn conflicting_flags_are_usage_errors() {
    let dir = TempDir::new().unwrap();
    let data = write_csv(&dir, "train.csv", 50, 0);
    let model = dir.path().join("model.json");
    for extra in [
        &["--mode", "gb", "--shrinkage", "0.1", "--capacity", "10"][..],
        &["--mode", "forest", "--subsample", "0.5"][..],
        &["--mode", "infinite-adaptive", "--loss", "rank"][..],
        &["--mode", "infinite", "--capacity", "-1"][..],
    ] {
        let mut args = vec!["train", "--data", s(&data), "--trees", "5", "--model", s(&model)];
        args.extend_from_slice(extra);
        assert_eq!(run(&args).status.code(), Some(2), "{extra:?}");
    }
}

#[test]
fn forest_manifest_records_unlimited_depth() {
    let dir = TempDir::new().unwrap();
    let data = write_csv(&dir, "train.csv", 100, 0);
    let model = dir.path().join("forest.json");
    ok(&["train", "--data", s(&data), "--mode", "forest", "--trees", "5", "--model", s(&model)]);
    let manifest = read_json(&dir.path().join("forest.manifest.json"));
    assert!(manifest["config"]["tree"]["max_depth"].is_null());
    assert!(manifest["initial_capacity"].is_null());
}

#[test]
fn empty_model_predicts_zero_and_half() {
    let dir = TempDir::new().unwrap();
    let data = write_csv(&dir, "train.csv", 40, 0);
    let model = dir.path().join("empty.json");
    ok(&[
        "train", "--data", s(&data), "--target", "label", "--loss", "logloss", "--mode", "infinite", "--capacity",
        "10", "--trees", "0", "--model", s(&model),
    ]);
    let raw = lines(&ok(&["predict", "--model", s(&model), "--data", s(&data), "--target", "label"]).stdout);
    assert_eq!(raw.len(), 40);
    assert!(raw.iter().all(|&p| p == 0.0));
    let proba =
        lines(&ok(&["predict", "--model", s(&model), "--data", s(&data), "--target", "label", "--proba"]).stdout);
    assert!(proba.iter().all(|&p| p == 0.5));
}

#[test]
fn predictions_written_to_file_match_stdout() {
    let dir = TempDir::new().unwrap();
    let train = write_csv(&dir, "train.csv", 150, 0);
    let test = write_csv(&dir, "test.csv", 60, 1000);
    let model = dir.path().join("m.json");
    let preds = dir.path().join("preds.txt");
    ok(&["train", "--data", s(&train), "--mode", "infinite", "--capacity", "5", "--trees", "15", "--model", s(&model)]);
    let stdout = lines(&ok(&["predict", "--model", s(&model), "--data", s(&test)]).stdout);
    ok(&["predict", "--model", s(&model), "--data", s(&test), "--out", s(&preds)]);
    let from_file = lines(&std::fs::read(&preds).unwrap());
    assert_eq!(stdout.len(), 60);
    assert_eq!(stdout, from_file);
    assert!(dir.path().join("preds.manifest.json").exists());

    let eval = ok(&["evaluate", "--model", s(&model), "--data", s(&test), "--metric", "mse"]);
    let result: Value = serde_json::from_slice(&eval.stdout).unwrap();
    assert!(result["value"].as_f64().unwrap().is_finite());
}

#[test]
fn curve_with_step_equal_to_trees_has_one_row() {
    let dir = TempDir::new().unwrap();
    let train = write_csv(&dir, "train.csv", 120, 0);
    let test = write_csv(&dir, "test.csv", 60, 500);
    let out = dir.path().join("curve.csv");
    ok(&[
        "curve", "--train", s(&train), "--test", s(&test), "--mode", "gb", "--shrinkage", "0.1", "--trees", "12",
        "--step", "12", "--metric", "mse", "--out", s(&out),
    ]);
    let text = std::fs::read_to_string(&out).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows[0], "iteration,train_metric,test_metric");
    assert_eq!(rows.len(), 2);
    assert!(rows[1].starts_with("12,"));
    assert!(dir.path().join("curve.manifest.json").exists());
}

#[test]
fn auc_curve_rejects_real_valued_targets() {
    let dir = TempDir::new().unwrap();
    let train = write_csv(&dir, "train.csv", 60, 0);
    let out = dir.path().join("curve.csv");
    let res = run(&[
        "curve", "--train", s(&train), "--test", s(&train), "--mode", "gb", "--shrinkage", "0.1", "--trees", "3",
        "--metric", "auc", "--out", s(&out),
    ]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn diagnose_writes_trace() {
    let dir = TempDir::new().unwrap();
    let data = write_csv(&dir, "train.csv", 120, 0);
    let out = dir.path().join("trace.csv");
    ok(&[
        "diagnose", "--data", s(&data), "--mode", "infinite", "--capacity", "5", "--trees", "20", "--probe-every",
        "10", "--probe-trees", "4", "--out", s(&out),
    ]);
    let text = std::fs::read_to_string(&out).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[0].starts_with("iteration,"));
    assert!(dir.path().join("trace.manifest.json").exists());

    let gb = run(&["diagnose", "--data", s(&data), "--mode", "gb", "--shrinkage", "0.1", "--trees", "5", "--out", s(&out)]);
    assert_eq!(gb.status.code(), Some(2));
}

#[test]
fn dimension_mismatch_is_a_data_error() {
    let dir = TempDir::new().unwrap();
    let train = write_csv(&dir, "train.csv", 80, 0);
    let model = dir.path().join("m.json");
    ok(&["train", "--data", s(&train), "--mode", "gb", "--shrinkage", "0.1", "--trees", "5", "--model", s(&model)]);
    let narrow = dir.path().join("narrow.csv");
    std::fs::write(&narrow, "a,b,target\n0.1,0.2,1\n0.3,0.4,0\n").unwrap();
    let out = run(&["predict", "--model", s(&model), "--data", s(&narrow)]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains('2') && err.contains('4'), "{err}");
}

#[test]
fn libsvm_input_is_padded_to_model_width() {
    let dir = TempDir::new().unwrap();
    let train = dir.path().join("train.svm");
    let mut text = String::new();
    for i in 0..60 {
        let x = i as f64 / 60.0;
        let _ = writeln!(text, "{} 1:{x} 3:{}", 3.0 * x, 1.0 - x);
    }
    std::fs::write(&train, text).unwrap();
    let short = dir.path().join("short.svm");
    std::fs::write(&short, "0 1:0.5\n1 1:0.9\n").unwrap();
    let model = dir.path().join("m.json");
    ok(&["train", "--data", s(&train), "--mode", "gb", "--shrinkage", "0.2", "--trees", "5", "--model", s(&model)]);
    let preds = lines(&ok(&["predict", "--model", s(&model), "--data", s(&short)]).stdout);
    assert_eq!(preds.len(), 2);
}

#[test]
fn identical_seeds_give_identical_models() {
    let dir = TempDir::new().unwrap();
    let data = write_csv(&dir, "train.csv", 150, 0);
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    for (m, threads) in [(&a, "1"), (&b, "2")] {
        ok(&[
            "--threads", threads, "train", "--data", s(&data), "--mode", "infinite-adaptive", "--trees", "25",
            "--seed", "7", "--model", s(m),
        ]);
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn cli_predictions_match_in_memory_model_bit_exactly() {
    use infiniteboost::data::read_csv;
    use infiniteboost::ensemble::{train, BoostConfig};
    use infiniteboost::loss::LossKind;

    let dir = TempDir::new().unwrap();
    let data = write_csv(&dir, "train.csv", 120, 0);
    let dataset = read_csv(std::fs::File::open(&data).unwrap(), Some("target"), true).unwrap();
    let model = train(&dataset, &BoostConfig::infinite(LossKind::SquaredError, 12, 4.0).with_seed(3)).unwrap();
    let path = dir.path().join("lib.json");
    std::fs::write(&path, model.to_json().unwrap()).unwrap();

    let expected = model.predict(&dataset).unwrap();
    let got = lines(&ok(&["predict", "--model", s(&path), "--data", s(&data)]).stdout);
    assert_eq!(got.len(), expected.len());
    for (a, b) in got.iter().zip(&expected) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
}

#[test]
fn fingerprint_changes_only_with_data() {
    let dir = TempDir::new().unwrap();
    let data = write_csv(&dir, "train.csv", 80, 0);
    let hash = |model: &str, extra: &[&str]| {
        let path = dir.path().join(model);
        let mut args = vec!["train", "--data", s(&data), "--mode", "gb", "--shrinkage", "0.1", "--model", s(&path)];
        args.extend_from_slice(extra);
        ok(&args);
        read_json(&dir.path().join(model.replace(".json", ".manifest.json")))["inputs"][0]["sha256"].clone()
    };
    let a = hash("a.json", &["--trees", "3"]);
    let b = hash("b.json", &["--trees", "5", "--seed", "9"]);
    assert_eq!(a, b);
    write_csv(&dir, "train.csv", 81, 0);
    assert_ne!(a, hash("c.json", &["--trees", "3"]));
}

#[test]
fn unit_shrinkage_gb_overfits_small_noisy_data() {
    let dir = TempDir::new().unwrap();
    let mut text = String::from("x,y,target\n");
    for i in 0..300 {
        let k = i as f64;
        let (x, y) = ((k * 0.61).sin(), (k * 1.37).cos());
        let noise = ((k * 12.9898).sin() * 43758.5453).fract() * 2.0;
        let _ = writeln!(text, "{x},{y},{}", x + y + noise);
    }
    let all: Vec<&str> = text.lines().collect();
    let train = dir.path().join("train.csv");
    let test = dir.path().join("test.csv");
    std::fs::write(&train, format!("{}\n{}\n", all[0], all[1..61].join("\n"))).unwrap();
    std::fs::write(&test, format!("{}\n{}\n", all[0], all[61..].join("\n"))).unwrap();
    let out = dir.path().join("curve.csv");
    ok(&[
        "curve", "--train", s(&train), "--test", s(&test), "--mode", "gb", "--shrinkage", "1", "--max-depth", "none",
        "--subsample", "1", "--max-features", "1", "--trees", "50", "--step", "1", "--metric", "mse", "--out",
        s(&out),
    ]);
    let text = std::fs::read_to_string(&out).unwrap();
    let rows: Vec<Vec<f64>> =
        text.lines().skip(1).map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    let last = rows.last().unwrap();
    assert!(last[1] < 1e-12, "train mse should reach zero, got {}", last[1]);
    let best_test = rows.iter().map(|r| r[2]).fold(f64::INFINITY, f64::min);
    assert!(last[2] >= best_test, "{} vs {best_test}", last[2]);
}

#[test]
fn learning_curve_alias_is_accepted() {
    let out = run(&["learning-curve", "--help"]);
    assert!(out.status.success());
}
