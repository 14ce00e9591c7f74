use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use wavepinn_core::wavegen::read_dataset;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wavepinn")).arg("-q").args(args).output().expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn generate(dir: &Path, name: &str, extra: &[&str]) -> std::path::PathBuf {
    let path = dir.join(name);
    let mut args = vec!["generate", "--out", p(&path), "--nt", "120"];
    args.extend_from_slice(extra);
    ok(&args);
    path
}

#[test]
fn missing_required_flag_is_a_usage_error() {
    assert_eq!(run(&["generate"]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn non_positive_lambda_is_rejected_before_reading_data() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["train", "--data", "nowhere.wfd", "--out", p(&dir.path().join("run")), "--lambda", "0"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("lambda"));
}

#[test]
fn missing_input_file_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["filter", "--in", p(&dir.path().join("absent.wfd")), "--out", p(&dir.path().join("f.wfd"))]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn export_names_missing_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let run_dir = dir.path().join("empty_run");
    std::fs::create_dir_all(&run_dir).unwrap();
    let out = run(&["export", "--run", p(&run_dir), "--out", p(&dir.path().join("exp"))]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("setup.json"));
}

#[test]
fn generate_writes_dataset_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let path = generate(dir.path(), "plain.wfd", &["--crack", "default"]);
    let ds = read_dataset(&path).unwrap();
    assert_eq!(ds.snapshots.dim(), (120, 60, 60));
    let truth = ds.true_speed.as_ref().unwrap();
    assert!(truth.values.iter().any(|&v| v < 1.0));
    let manifest: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("plain.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["subcommand"], "generate");
    assert_eq!(manifest["config"]["nt"], 120);
}

#[test]
fn generate_csv_format_writes_one_file_per_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("csv");
    ok(&["generate", "--out", p(&out), "--nt", "5", "--format", "csv"]);
    let csvs = std::fs::read_dir(&out)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "csv"))
        .count();
    assert_eq!(csvs, 5);
    assert!(out.join("manifest.json").exists());
}

#[test]
fn filter_at_threshold_one_is_the_identity_and_reduces_noisy_data() {
    let dir = tempfile::tempdir().unwrap();
    let noisy = generate(dir.path(), "noisy.wfd", &["--snr-db", "15", "--seed", "3"]);
    let same = dir.path().join("same.wfd");
    ok(&["filter", "--in", p(&noisy), "--out", p(&same), "--threshold", "1.0"]);
    let (a, b) = (read_dataset(&noisy).unwrap(), read_dataset(&same).unwrap());
    let diff = a.snapshots.iter().zip(b.snapshots.iter()).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    assert!(diff < 1e-10, "{diff}");

    let reduced = dir.path().join("reduced.wfd");
    let summary: Value = serde_json::from_str(ok(&["filter", "--in", p(&noisy), "--out", p(&reduced)]).trim()).unwrap();
    assert!(summary["k_max"].as_u64().unwrap() < 60, "{summary}");
    assert!(dir.path().join("reduced.components.csv").exists());
    assert!(dir.path().join("reduced.variance.csv").exists());
}

#[test]
fn filter_refuses_to_overwrite_its_input() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate(dir.path(), "d.wfd", &[]);
    assert_eq!(run(&["filter", "--in", p(&data), "--out", p(&data)]).status.code(), Some(2));
}

#[test]
fn short_training_run_exports_plot_files() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate(dir.path(), "d.wfd", &[]);
    let run_dir = dir.path().join("run");
    let summary = ok(&[
        "train", "--data", p(&data), "--out", p(&run_dir), "--preset", "fig4", "--epochs", "20", "--log-every", "10",
        "--batch-size", "64", "--snapshot-count", "4",
    ]);
    let summary: Value = serde_json::from_str(summary.trim()).unwrap();
    assert_eq!(summary["epochs"], 20);
    for f in ["trace.csv", "config.json", "velocity.csv", "velocity.wfd", "summary.json", "manifest.json"] {
        assert!(run_dir.join(f).exists(), "{f}");
    }
    let exp = dir.path().join("exp");
    ok(&["export", "--run", p(&run_dir), "--out", p(&exp)]);
    let errors: Value = serde_json::from_str(&std::fs::read_to_string(exp.join("errors.json")).unwrap()).unwrap();
    assert!(errors["wavefield_vs_data"].as_f64().unwrap().is_finite());
    assert!(exp.join("velocity_heatmap.csv").exists());
}
