use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use perfhom::cell::HomogenizedModel;
use perfhom::config::{parse_config, RunConfig};
use perfhom::geometry::read_mesh_text;
use perfhom::harness::{ConvergenceReport, CSV_HEADER};

fn perfhom(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_perfhom"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_cfg(dir: &Path, text: &str) -> String {
    let path = dir.join("run.cfg");
    fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

const SMALL: &str = "regime=M_pos\nsweep.n=1,2\ncounts.k=1\nlimit.grid=32\n";

#[test]
fn print_defaults_parses_back() {
    let out = perfhom(&["--print-defaults"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(parse_config(&text).unwrap(), RunConfig::default());
}

#[test]
fn missing_subcommand_is_a_validation_error() {
    assert_eq!(perfhom(&[]).status.code(), Some(2));
}

#[test]
fn cell_writes_model() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "regime=M_zero\n");
    let out_dir = dir.path().join("out");
    let out = perfhom(&["cell", "-c", &cfg, "-o", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let model = HomogenizedModel::from_json(&fs::read_to_string(out_dir.join("model.json")).unwrap()).unwrap();
    assert!(model.nu2.unwrap() > 0.0);
}

#[test]
fn invalid_configs_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "regime=M_pos\ndensity.case=zero_avg\nsweep.n=2,2\n");
    let out = perfhom(&["cell", "-c", &cfg, "-o", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("does not match") && err.contains("strictly increasing"), "{err}");

    let cfg = write_cfg(dir.path(), "regime=M_pos\nlimit.grid=64\nlimit.grid=32\n");
    let out = perfhom(&["cell", "-c", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr).unwrap().contains("duplicate key `limit.grid`"));

    let cfg = write_cfg(dir.path(), SMALL);
    let out = perfhom(&["sweep", "-c", &cfg, "--budget", "100", "-o", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn solver_errors_exit_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "regime=M_pos\nsweep.n=1\ncounts.k=500\n");
    let out = perfhom(&["solve-eps", "-c", &cfg, "-o", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn solve_eps_exports_fields() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "regime=M_zero\nsweep.n=1,2\ncounts.k=1\n");
    let out = perfhom(&["solve-eps", "-c", &cfg, "-o", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let mesh = read_mesh_text(fs::read(dir.path().join("eps_n2.mesh")).unwrap().as_slice()).unwrap();
    let names: Vec<&str> = mesh.fields.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(names, ["u_plus_1", "u_minus_1"]);
    assert_eq!(mesh.fields[0].1.len(), mesh.vertices.len());
    let doc: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("eps_n1.json")).unwrap()).unwrap();
    assert!(doc["normalization_defect"].as_f64().unwrap() < 1e-8);
}

#[test]
fn limit_writes_both_sides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "regime=M_pos\nlimit.grid=16\ndiagnostics.corrector=false\n");
    let out = perfhom(&["limit", "-c", &cfg, "-o", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let doc: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("limit.json")).unwrap()).unwrap();
    assert!(doc["positive_side"]["eigenvalues"][0].as_f64().unwrap() > 0.0);
    assert!(doc["negative_side"]["eigenvalues"][0].as_f64().unwrap() < 0.0);
}

#[test]
fn sweep_outputs_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), SMALL);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for d in [&a, &b] {
        let out = perfhom(&["sweep", "-c", &cfg, "-o", d.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for name in ["M_pos_convergence.csv", "M_pos_report.json", "M_pos_error_plus.svg"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
    let csv = fs::read_to_string(a.join("M_pos_convergence.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some(CSV_HEADER));
    assert_eq!(csv.lines().count(), 1 + 2 * 2);
    let json = fs::read_to_string(a.join("M_pos_report.json")).unwrap();
    let report = ConvergenceReport::from_json(&json).unwrap();
    assert_eq!(report.to_json().unwrap(), json);
}

#[test]
fn formats_flag_limits_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), SMALL);
    let out = perfhom(&["sweep", "-c", &cfg, "-o", dir.path().to_str().unwrap(), "--formats", "csv"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(dir.path().join("M_pos_convergence.csv").exists());
    assert!(!dir.path().join("M_pos_report.json").exists());
}

#[test]
fn check_passes() {
    let out = perfhom(&["check"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS")).count(), 13, "{text}");
    assert_eq!(out.status.code(), Some(0));
}
