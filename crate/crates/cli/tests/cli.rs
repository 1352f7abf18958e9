//! Contract tests for the command-line interface: exit codes, artifact
//! layout, flag handling, and seed overrides.

use std::process::Command;

fn sdm() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sdm"))
}

fn write_config(dir: &std::path::Path, name: &str, body: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

const ETC_CONFIG: &str = r#"{
  "experiment": "bandit-etc",
  "seed": 7,
  "replications": 5,
  "params": {"means": [0.5, 0.7], "horizon": 500, "m": {"fixed": 20}}
}"#;

#[test]
fn bandit_run_writes_curve_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "etc.json", ETC_CONFIG);
    let out = dir.path().join("out");
    let output = sdm()
        .args(["bandit", "--config"])
        .arg(&config)
        .args(["--seed", "7", "--output-dir"])
        .arg(&out)
        .output()
        .unwrap();
    assert!(output.status.success());
    let stdout = String::from_utf8(output.stdout).unwrap();
    assert!(stdout.contains("bandit-etc"), "summary line: {stdout}");

    let regret = std::fs::read_to_string(out.join("regret.csv")).unwrap();
    let mut lines = regret.lines();
    assert_eq!(
        lines.next().unwrap(),
        "seed,t,arm,instantaneous_gap,cumulative_regret"
    );
    // header + horizon rows per emitted replication (curve_limit default 3)
    assert_eq!(regret.lines().count(), 1 + 3 * 500);
    assert!(out.join("summary.json").exists());

    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["experiment"], "bandit-etc");
    assert_eq!(summary["rows"].as_array().unwrap().len(), 5);
}

#[test]
fn missing_config_exits_2_naming_the_path() {
    let output = sdm()
        .args(["bandit", "--config", "/nonexistent/etc.json"])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8(output.stderr).unwrap();
    assert!(stderr.contains("/nonexistent/etc.json"), "stderr: {stderr}");
}

#[test]
fn invalid_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "bad.json",
        r#"{"experiment": "bandit-etc", "replications": 0}"#,
    );
    let output = sdm().args(["bandit", "--config"]).arg(&config).output().unwrap();
    assert_eq!(output.status.code(), Some(2));
    assert!(String::from_utf8(output.stderr).unwrap().contains("replications"));
}

#[test]
fn family_mismatch_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "etc.json", ETC_CONFIG);
    let output = sdm().args(["mdp", "--config"]).arg(&config).output().unwrap();
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn unknown_flags_are_rejected() {
    let output = sdm().args(["bandit", "--bogus-flag", "1"]).output().unwrap();
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn seed_override_changes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "etc.json", ETC_CONFIG);
    let run = |seed: &str, out: &std::path::Path| {
        let output = sdm()
            .args(["bandit", "--config"])
            .arg(&config)
            .args(["--seed", seed, "--output-dir"])
            .arg(out)
            .output()
            .unwrap();
        assert!(output.status.success());
        std::fs::read(out.join("summary.json")).unwrap()
    };
    let a = run("1", &dir.path().join("a"));
    let b = run("2", &dir.path().join("b"));
    let a_again = run("1", &dir.path().join("a2"));
    assert_ne!(a, b);
    assert_eq!(a, a_again);
}

#[test]
fn env_var_overrides_default_output_dir() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "etc.json", ETC_CONFIG);
    let out = dir.path().join("from-env");
    let output = sdm()
        .args(["bandit", "--config"])
        .arg(&config)
        .env("SDM_OUT_DIR", &out)
        .output()
        .unwrap();
    assert!(output.status.success());
    assert!(out.join("summary.json").exists());
}

#[test]
fn jsonl_format_flag() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "etc.json", ETC_CONFIG);
    let out = dir.path().join("out");
    let output = sdm()
        .args(["bandit", "--config"])
        .arg(&config)
        .args(["--format", "jsonl", "--output-dir"])
        .arg(&out)
        .output()
        .unwrap();
    assert!(output.status.success());
    assert!(out.join("regret.jsonl").exists());
}

#[test]
fn repro_single_scenario_prints_pass() {
    let dir = tempfile::tempdir().unwrap();
    let output = sdm()
        .args(["repro", "newton-gain", "--output-dir"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(output.status.success());
    let stdout = String::from_utf8(output.stdout).unwrap();
    assert!(stdout.contains("[PASS] newton-gain"));
    assert!(stdout.contains("k[0]"));
    assert!(dir.path().join("repro/newton-gain.json").exists());
}

#[test]
fn repro_unknown_scenario_exits_2() {
    let output = sdm().args(["repro", "not-a-scenario"]).output().unwrap();
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn lqr_family_runs_from_config() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "lqr.json",
        r#"{
  "experiment": "lqr-design",
  "params": {
    "A": [[1.0, 1.0], [0.0, 1.0]],
    "B": [[0.0], [1.0]],
    "Phi": [[1.0, 0.5], [0.5, 0.25]],
    "Psi": [[0.0]],
    "horizon": 200
  }
}"#,
    );
    let out = dir.path().join("out");
    let output = sdm()
        .args(["lqr", "--config"])
        .arg(&config)
        .args(["--output-dir"])
        .arg(&out)
        .output()
        .unwrap();
    assert!(
        output.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    let design: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("design.json")).unwrap()).unwrap();
    let k = design["K"][0].as_array().unwrap();
    assert!((k[0].as_f64().unwrap() - 2.0).abs() < 1e-3);
    assert!((k[1].as_f64().unwrap() - 3.0).abs() < 1e-3);
}
