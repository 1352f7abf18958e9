//! Acceptance suite: every numbered criterion runs against its stored
//! tolerance and prints one pass/fail line (visible with --nocapture).
//! The scenarios are the same ones `sdm repro` exposes; the determinism
//! criterion exercises the installed binary itself.

use std::process::Command;

use sdm_core::repro::run_scenario;

fn criterion(number: usize, scenario: &str) {
    let result = run_scenario(scenario).unwrap_or_else(|e| panic!("{scenario}: {e}"));
    let verdict = if result.pass { "PASS" } else { "FAIL" };
    println!("criterion {number:2} [{verdict}] {}", result.name);
    for check in &result.checks {
        println!("    {}", check.describe());
    }
    assert!(result.pass, "criterion {number} failed: {:#?}", result.checks);
}

#[test]
fn criterion_01_newton_lqr_gain() {
    criterion(1, "newton-gain");
}

#[test]
fn criterion_02_shift_register_fragility() {
    criterion(2, "shift-register-fragility");
}

#[test]
fn criterion_03_lqg_fragility() {
    criterion(3, "lqg-fragility");
}

#[test]
fn criterion_04_estimation_control_duality() {
    criterion(4, "duality");
}

#[test]
fn criterion_05_certainty_equivalence_curvature() {
    criterion(5, "ce-curvature");
}

#[test]
fn criterion_06_model_error_bound() {
    criterion(6, "model-error");
}

#[test]
fn criterion_07_tabular_oracle_equivalence() {
    criterion(7, "tabular-oracle");
}

#[test]
fn criterion_08_etc_regret_bounds() {
    criterion(8, "etc-bound");
}

#[test]
fn criterion_09_successive_elimination() {
    criterion(9, "successive-elimination");
}

#[test]
fn criterion_10_ucb_sublinearity() {
    criterion(10, "ucb-sublinearity");
}

#[test]
fn criterion_11_mpc_bound() {
    criterion(11, "mpc-bound");
}

#[test]
fn criterion_12_gradient_estimator_checks() {
    criterion(12, "gradient-checks");
}

#[test]
fn criterion_13_sample_complexity_envelope() {
    criterion(13, "sample-complexity");
}

fn collect_outputs(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(current) = stack.pop() {
        for entry in std::fs::read_dir(&current).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                files.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    files.sort();
    files
}

#[test]
fn criterion_14_repro_all_is_byte_deterministic() {
    let run = |dir: &std::path::Path| {
        let output = Command::new(env!("CARGO_BIN_EXE_sdm"))
            .args(["repro", "--all", "--output-dir"])
            .arg(dir)
            .output()
            .expect("binary runs");
        assert!(
            output.status.success(),
            "repro --all failed: {}",
            String::from_utf8_lossy(&output.stderr)
        );
        (output.stdout, collect_outputs(dir))
    };
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let (stdout_a, files_a) = run(dir_a.path());
    let (stdout_b, files_b) = run(dir_b.path());
    assert_eq!(stdout_a, stdout_b, "stdout differs between runs");
    assert_eq!(
        files_a.iter().map(|(n, _)| n).collect::<Vec<_>>(),
        files_b.iter().map(|(n, _)| n).collect::<Vec<_>>()
    );
    for ((name_a, bytes_a), (_, bytes_b)) in files_a.iter().zip(files_b.iter()) {
        assert_eq!(bytes_a, bytes_b, "{name_a} differs between runs");
    }
    println!("criterion 14 [PASS] repro --all twice is byte-identical");
}
