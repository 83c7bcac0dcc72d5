//! Binary-level tests of the CLI verbs and exit codes.

use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hypercil"))
}

fn fast_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("fast.cfg");
    std::fs::write(&path, "base_epochs = 6\nincremental_epochs = 3\nseed = 2\n").unwrap();
    path
}

#[test]
fn run_emits_results_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fast_config(dir.path());
    let out_dir = dir.path().join("results");
    let output = bin()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));

    let csv = std::fs::read_to_string(out_dir.join("sessions.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "session,overall_acc,novel_acc,known_acc,unknown_acc");
    assert_eq!(lines.len(), 4); // header + base + 2 incremental sessions

    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["seed"], 2);
    assert_eq!(summary["config"]["base_epochs"], 6);
    assert!(summary["pd"].is_number());
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("PD"), "{stdout}");
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fast_config(dir.path());
    let out_dir = dir.path().join("results");
    let output = bin()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir)
        .args(["--seed", "9"])
        .output()
        .unwrap();
    assert!(output.status.success());
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["seed"], 9);
    assert_eq!(summary["config"]["seed"], 9);
}

#[test]
fn config_error_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "beta = 1.2\n").unwrap();
    let output = bin().args(["run", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(output.status.code(), Some(2));
    let err = String::from_utf8_lossy(&output.stderr);
    assert!(err.contains("beta must lie in [0,1]"), "{err}");

    let output = bin()
        .args(["run", "--config", "/nonexistent/path.cfg"])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn dataset_error_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("bad.csv");
    std::fs::write(&data, "split,class,f0\ntrain,0,oops\n").unwrap();
    let cfg = dir.path().join("c.cfg");
    std::fs::write(&cfg, format!("dataset_csv = {}\n", data.display())).unwrap();
    let output = bin().args(["run", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(output.status.code(), Some(3));
    let err = String::from_utf8_lossy(&output.stderr);
    assert!(err.contains("line 2"), "{err}");
}

#[test]
fn gen_data_round_trips_through_run() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("blobs.csv");
    let output = bin()
        .args(["gen-data", "--classes", "10", "--train", "8", "--test", "4"])
        .args(["--dim", "6", "--sep", "9.0", "--seed", "5", "--out"])
        .arg(&data)
        .output()
        .unwrap();
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));

    let text = std::fs::read_to_string(&data).unwrap();
    assert!(text.starts_with("split,class,f0,f1,f2,f3,f4,f5\n"));
    assert_eq!(text.lines().count(), 1 + 10 * 12);

    let cfg = dir.path().join("c.cfg");
    std::fs::write(
        &cfg,
        format!(
            "dataset_csv = {}\nbase_epochs = 4\nincremental_epochs = 2\nshots = 4\ndim = 6\n",
            data.display()
        ),
    )
    .unwrap();
    let out_dir = dir.path().join("results");
    let output = bin()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    assert!(out_dir.join("sessions.csv").exists());
}

#[test]
fn sweep_writes_rows_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fast_config(dir.path());
    let out_dir = dir.path().join("sweep_out");
    let output = bin()
        .args(["sweep", "--config"])
        .arg(&cfg)
        .args(["--param", "beta", "--values", "0.0,0.3,0.7,1.0", "--out"])
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    let csv = std::fs::read_to_string(out_dir.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "beta,final_acc,pd,average_acc");
    assert_eq!(lines.len(), 5);
    assert!(lines[4].starts_with("1,") || lines[4].starts_with("1.0,"));
}

#[test]
fn sweep_beta_one_row_matches_standalone_euclidean_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = fast_config(dir.path());
    let text = std::fs::read_to_string(&cfg_path).unwrap();

    // standalone run with beta = 1.0
    let solo_cfg = dir.path().join("solo.cfg");
    std::fs::write(&solo_cfg, format!("{text}beta = 1.0\n")).unwrap();
    let solo_out = dir.path().join("solo_out");
    assert!(bin()
        .args(["run", "--config"])
        .arg(&solo_cfg)
        .arg("--out")
        .arg(&solo_out)
        .output()
        .unwrap()
        .status
        .success());
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(solo_out.join("summary.json")).unwrap())
            .unwrap();

    let sweep_out = dir.path().join("sweep_out");
    assert!(bin()
        .args(["sweep", "--config"])
        .arg(&cfg_path)
        .args(["--param", "beta", "--values", "1.0", "--out"])
        .arg(&sweep_out)
        .output()
        .unwrap()
        .status
        .success());
    let sweep_csv = std::fs::read_to_string(sweep_out.join("sweep.csv")).unwrap();
    let row = sweep_csv.lines().nth(1).unwrap();
    let fields: Vec<&str> = row.split(',').collect();

    let expect = |v: f64| format!("{v:.2}");
    assert_eq!(fields[1], expect(*summary["session_acc"].as_array().unwrap().last().unwrap().as_f64().as_ref().unwrap()));
    assert_eq!(fields[2], expect(summary["pd"].as_f64().unwrap()));
    assert_eq!(fields[3], expect(summary["average_acc"].as_f64().unwrap()));
}

#[test]
fn sweep_rejects_bad_parameter_before_running() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fast_config(dir.path());
    let output = bin()
        .args(["sweep", "--config"])
        .arg(&cfg)
        .args(["--param", "epochs", "--values", "1,2"])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));

    // invalid value for a sweepable parameter also fails fast
    let output = bin()
        .args(["sweep", "--config"])
        .arg(&cfg)
        .args(["--param", "beta", "--values", "0.5,1.7"])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn protocol_violation_exits_5() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.cfg");
    // 6 base + 5 sessions of 2-way needs 16 classes; only 10 exist
    std::fs::write(&cfg, "sessions = 5\nbase_epochs = 1\n").unwrap();
    let output = bin().args(["run", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(output.status.code(), Some(5));
    let err = String::from_utf8_lossy(&output.stderr);
    assert!(err.contains("16") && err.contains("10"), "{err}");
}

#[test]
fn gradcheck_verb_reports_errors_per_loss() {
    let output = bin()
        .args(["gradcheck", "--seed", "1", "--fixtures", "2"])
        .output()
        .unwrap();
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    let stdout = String::from_utf8_lossy(&output.stdout);
    for name in [
        "classification_loss",
        "open_space_risk",
        "base_loss",
        "hyper_metric_loss",
        "incremental_loss",
    ] {
        assert!(stdout.contains(name), "missing {name} in: {stdout}");
    }
}

#[test]
fn tau_sweep_grid_runs() {
    let dir = tempfile::tempdir().unwrap();
    // enable the metric term from the first incremental session so tau
    // influences training
    let cfg = dir.path().join("tau.cfg");
    std::fs::write(
        &cfg,
        "base_epochs = 4\nincremental_epochs = 3\nmetric_start_session = 2\nmetric_start_epoch = 0\nseed = 3\n",
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let output = bin()
        .args(["sweep", "--config"])
        .arg(&cfg)
        .args(["--param", "tau", "--values", "0.7,0.8,0.9,1.0", "--out"])
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    let csv = std::fs::read_to_string(out_dir.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
}
