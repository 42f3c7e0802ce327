use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn pqg(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pqg"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

const SMALL: &str = "[grid]\nnx = 8\nny = 8\nnz = 4\n[dynamics]\ndt = 600.0\nt_end = 1200.0\noutput_every = 1\n";

#[test]
fn cc_tables_writes_tables_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = pqg(&["cc-tables", "--out", "cc"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    for name in ["derived.csv", "prefactors.csv", "saturation.csv", "summary.json"] {
        assert!(dir.path().join("cc").join(name).exists(), "{name}");
    }
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("PASS rho_ref"));
}

#[test]
fn relaxation_study_emits_error_column() {
    let dir = tempfile::tempdir().unwrap();
    let out = pqg(&["relaxation-study", "--n-max", "3", "--out", "rel"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let csv = fs::read_to_string(dir.path().join("rel/errors.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(dir.path().join("rel/trajectory_n3.csv").exists());
}

#[test]
fn inversion_verify_reports_orders() {
    let dir = tempfile::tempdir().unwrap();
    let out = pqg(&["inversion-verify", "--nx", "8", "--nz", "8,16", "--out", "inv"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let csv = fs::read_to_string(dir.path().join("inv/convergence.csv")).unwrap();
    let order: f64 = csv.lines().nth(2).unwrap().split(',').nth(2).unwrap().parse().unwrap();
    assert!((order - 2.0).abs() < 0.3);
}

#[test]
fn run_with_overrides() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.toml"), SMALL).unwrap();
    let out = pqg(&["run", "--config", "run.toml", "--variant", "fast", "--seed", "9", "--out", "r"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("r/frame_00002.pqgf").exists());
    assert!(dir.path().join("r/diagnostics.csv").exists());
}

#[test]
fn config_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.toml"), "[grid]\n[regime]\nalpha = 2\n").unwrap();
    let out = pqg(&["run", "--config", "bad.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("regime selector must be 0 or 1"));

    fs::write(dir.path().join("syntax.toml"), "[grid\n").unwrap();
    let out = pqg(&["run", "--config", "syntax.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 1"));

    let out = pqg(&["run"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn numerical_failure_exits_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let text = SMALL.replace("dt = 600.0\nt_end = 1200.0", "dt = 900000.0\nt_end = 1800000.0");
    fs::write(dir.path().join("run.toml"), text).unwrap();
    let out = pqg(&["run", "--config", "run.toml", "--out", "r"], dir.path());
    assert_eq!(out.status.code(), Some(3));
    assert!(dir.path().join("r/failure.json").exists());
}
