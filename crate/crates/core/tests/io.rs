use std::fs;

use pqg::config::parse_config;
use pqg::dynamics::{initial_state, ScalarDiagnostics, Variant};
use pqg::experiments;
use pqg::frame::{read_frame, write_frame, Frame, FIELD_ORDER};
use pqg::Error;

const SMALL: &str = "[grid]\nnx = 16\nny = 16\nnz = 4\n[dynamics]\nvariant = \"continuous\"\ndt = 600.0\nt_end = 1800.0\noutput_every = 1\n";

#[test]
fn tabulated_paths_resolve_against_config_dir() {
    let dir = tempfile::tempdir().unwrap();
    let tables = dir.path().join("profiles");
    fs::create_dir(&tables).unwrap();
    fs::write(tables.join("rho.txt"), "0 1.2\n10000 0.5\n").unwrap();
    fs::write(tables.join("theta.txt"), "# z theta_e\n0 280\n10000 310\n").unwrap();
    fs::write(tables.join("qvs.txt"), "0, 0.01\n10000, 0.001\n").unwrap();
    let path = dir.path().join("run.toml");
    fs::write(
        &path,
        "[grid]\nnx = 8\nny = 8\nnz = 4\n[background]\nfamily = \"tabulated\"\n\
         [background.tables]\nrho = \"profiles/rho.txt\"\ntheta_e = \"profiles/theta.txt\"\nq_vs = \"profiles/qvs.txt\"\n",
    )
    .unwrap();
    let cfg = parse_config(&path).unwrap();
    let bg = cfg.build_background().unwrap();
    assert!((bg.theta_e.faces[0] - 280.0).abs() < 1e-12);
    assert!((bg.rho.faces[4] - 0.5).abs() < 1e-12);
}

#[test]
fn missing_file_is_config_error() {
    let err = parse_config(std::path::Path::new("/nonexistent/run.toml")).unwrap_err();
    assert!(err.is_config());
}

#[test]
fn frame_from_model_state_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.toml");
    fs::write(&path, SMALL).unwrap();
    let cfg = parse_config(&path).unwrap();
    let model = cfg.build_model().unwrap();
    let s = initial_state(&model, &cfg.dynamics.initial, 3).unwrap();
    let d = model.close_diagnostics(&s).unwrap();
    let frame = Frame::from_state(&s, &d);
    let names: Vec<&str> = frame.fields.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(names, FIELD_ORDER);
    let file = dir.path().join("f.pqgf");
    write_frame(&frame, &file).unwrap();
    let back = read_frame(&file).unwrap();
    assert_eq!(back, frame);
    assert_eq!(fs::read(&file).unwrap()[..4], *b"PQGF");
}

#[test]
fn run_writes_one_csv_row_per_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = pqg::config::RunConfig::parse_str(SMALL, None).unwrap();
    let summary = experiments::run(&cfg, dir.path()).unwrap();
    let csv = fs::read_to_string(dir.path().join("diagnostics.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), ScalarDiagnostics::COLUMNS.join(","));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 4);
    assert_eq!(summary.results.frames.len(), 4);
    for (n, row) in rows.iter().enumerate() {
        let cols: Vec<&str> = row.split(',').collect();
        assert_eq!(cols.len(), ScalarDiagnostics::COLUMNS.len());
        assert_eq!(cols[0].parse::<usize>().unwrap(), n);
        assert_eq!(cols[1].parse::<f64>().unwrap(), 600.0 * n as f64);
    }
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(json["experiment"], "run");
    assert!(json["checks"].as_array().unwrap().len() >= 3);
}

#[test]
fn cfl_violation_leaves_failure_record() {
    let dir = tempfile::tempdir().unwrap();
    let text = SMALL.replace("dt = 600.0\nt_end = 1800.0", "dt = 600000.0\nt_end = 1800000.0");
    let cfg = pqg::config::RunConfig::parse_str(&text, None).unwrap();
    let err = experiments::run(&cfg, dir.path()).unwrap_err();
    assert!(matches!(err, Error::StepSize { .. }), "{err}");
    let record = fs::read_to_string(dir.path().join("failure.json")).unwrap();
    assert!(record.contains("Courant") || record.contains("exceeds limit"));
}

#[test]
fn fast_variant_runs_without_cloud_state() {
    let cfg = pqg::config::RunConfig::parse_str(&SMALL.replace("continuous", "fast"), None).unwrap();
    let model = cfg.build_model().unwrap();
    let s = initial_state(&model, &cfg.dynamics.initial, 0).unwrap();
    assert_eq!(s.variant, Variant::Fast);
    assert!(s.q_c.is_none());
    let out = model.step(&s, cfg.dynamics.dt).unwrap();
    assert!(out.state.q.iter().all(|v| v.is_finite()));
}
