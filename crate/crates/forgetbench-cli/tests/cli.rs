//! End-to-end tests against the compiled binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_forgetbench"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap_or(-1)
}

/// Two separable classes in 6 dimensions, written as train.csv/test.csv.
fn write_blob_dataset(dir: &Path) -> PathBuf {
    let ds = dir.join("blobs");
    std::fs::create_dir_all(&ds).unwrap();
    let mut train = String::new();
    let mut test = String::new();
    for i in 0..48 {
        let class = i % 2;
        let offset = if class == 0 { -2.0 } else { 2.0 };
        let jitter = (i as f64 * 0.37).sin() * 0.2;
        let row = format!(
            "{class},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4}\n",
            offset + jitter,
            offset - jitter,
            jitter,
            offset * 0.5,
            -offset * 0.25 + jitter,
            offset + 0.1
        );
        if i < 36 {
            train.push_str(&row);
        } else {
            test.push_str(&row);
        }
    }
    std::fs::write(ds.join("train.csv"), train).unwrap();
    std::fs::write(ds.join("test.csv"), test).unwrap();
    ds
}

fn write_fast_config(dir: &Path) -> PathBuf {
    let path = dir.join("fast.json");
    std::fs::write(
        &path,
        r#"{
  "overrides": {
    "hidden": [8],
    "max_epochs": 8,
    "batch_size": 8,
    "learning_rate": 0.01,
    "optimizer": "adam",
    "pathnet_population": 4,
    "pathnet_generations": 2,
    "pathnet_units": 8,
    "som_rows": 4,
    "som_cols": 4,
    "base_iters": 200,
    "incremental_iters": 100,
    "readout_lr": 0.05,
    "fel_units": 16,
    "fel_fan_in": 3,
    "fel_winners": 3
  }
}"#,
    )
    .unwrap();
    path
}

#[test]
fn help_exits_zero_everywhere() {
    assert_eq!(code(&run(&["--help"])), 0);
    for sub in ["run", "ideal", "metrics", "fcbf", "summarize", "plot"] {
        let out = run(&[sub, "--help"]);
        assert_eq!(code(&out), 0, "{sub} --help");
    }
}

#[test]
fn missing_required_flag_prints_usage_and_exits_one() {
    let out = run(&["run", "--protocol", "permutation"]);
    assert_eq!(code(&out), 1);
    let text = String::from_utf8_lossy(&out.stderr);
    assert!(text.to_lowercase().contains("usage"), "{text}");
}

#[test]
fn unknown_flag_is_rejected() {
    let out = run(&["summarize", "--dir", ".", "--frobnicate"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn pathnet_incremental_class_exits_one_with_rationale() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = write_blob_dataset(tmp.path());
    let out = run(&[
        "run",
        "--protocol",
        "incremental-class",
        "--model",
        "pathnet",
        "--dataset",
        ds.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 1);
    let text = String::from_utf8_lossy(&out.stderr);
    assert!(text.contains("pathnet"), "{text}");
}

#[test]
fn run_metrics_summarize_plot_roundtrip() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = write_blob_dataset(tmp.path());
    let cfg = write_fast_config(tmp.path());
    let results = tmp.path().join("results");

    let out = run(&[
        "run",
        "--protocol",
        "permutation",
        "--model",
        "mlp",
        "--dataset",
        ds.to_str().unwrap(),
        "--sessions",
        "2",
        "--seed",
        "1",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        results.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let record_path = results.join("mlp_permutation_blobs_1.json");
    assert!(record_path.exists());

    let record: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&record_path).unwrap()).unwrap();
    let stored_base = record["omega_base"].as_f64().unwrap();

    let out = run(&["metrics", "--record", record_path.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(
        stdout.contains(&format!("omega_base={stored_base:.6}")),
        "{stdout}"
    );

    let out = run(&["summarize", "--dir", results.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    assert!(results.join("summary.csv").exists());
    assert!(String::from_utf8_lossy(&out.stdout).contains("mlp,permutation"));

    let out = run(&[
        "plot",
        "--dir",
        results.to_str().unwrap(),
        "--figure",
        "base",
    ]);
    assert_eq!(code(&out), 0);
    assert!(results.join("curve_permutation_base.csv").exists());
    assert!(results.join("curve_permutation_base.svg").exists());
}

#[test]
fn rerun_overwrites_with_identical_curves() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = write_blob_dataset(tmp.path());
    let cfg = write_fast_config(tmp.path());
    let results = tmp.path().join("results");
    let args = [
        "run",
        "--protocol",
        "permutation",
        "--model",
        "mlp",
        "--dataset",
        ds.to_str().unwrap(),
        "--sessions",
        "3",
        "--seed",
        "9",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        results.to_str().unwrap(),
    ];
    assert_eq!(code(&run(&args)), 0);
    let path = results.join("mlp_permutation_blobs_9.json");
    let first: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(code(&run(&args)), 0);
    let second: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(first["sessions"][0]["alpha_new"], second["sessions"][0]["alpha_new"]);
    assert_eq!(first["omega_all"], second["omega_all"]);
    assert_eq!(first["alpha_ideal"], second["alpha_ideal"]);
}

#[test]
fn fcbf_writes_summary_with_kept_features() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = write_blob_dataset(tmp.path());
    let results = tmp.path().join("results");
    let out = run(&[
        "fcbf",
        "--dataset",
        ds.to_str().unwrap(),
        "--bins",
        "8",
        "--out",
        results.to_str().unwrap(),
        "--su-matrix",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(results.join("fcbf_blobs.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(summary["total_features"], 6);
    assert!(summary["kept_features"].as_u64().unwrap() >= 1);
    assert!(results.join("su_blobs.csv").exists());
}

#[test]
fn ideal_caches_alpha_for_dataset_and_protocol() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = write_blob_dataset(tmp.path());
    let cfg = write_fast_config(tmp.path());
    let results = tmp.path().join("results");
    let out = run(&[
        "ideal",
        "--dataset",
        ds.to_str().unwrap(),
        "--protocol",
        "permutation",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        results.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(results.join("ideal_blobs_permutation.json").exists());
    assert!(String::from_utf8_lossy(&out.stdout).contains("alpha_ideal"));
}

#[test]
fn multimodal_requires_second_dataset() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = write_blob_dataset(tmp.path());
    let out = run(&[
        "run",
        "--protocol",
        "multimodal",
        "--model",
        "mlp",
        "--dataset",
        ds.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 1);
}
