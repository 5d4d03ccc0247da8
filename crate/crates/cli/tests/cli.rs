use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn omniwpt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_omniwpt")).args(args).output().unwrap()
}

fn header(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

fn stderr_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stderr).unwrap()
}

#[test]
fn sweep_headers_are_fixed() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    for (kind, file, want) in [
        ("rotation", "rotation.csv", "angle_deg,pte_single_small,pte_single_large,pte_fixed3,pte_ae3"),
        ("lateral", "lateral.csv", "x_mm,pte_single_small,pte_single_large,pte_fixed3,pte_ae3"),
        ("current-grid", "current_grid.csv", "theta_deg,i_tx2_a,i_tx3_a,pte"),
    ] {
        let out = omniwpt(&["sweep", kind, "--out", d, "--steps", "5"]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        assert_eq!(header(&dir.path().join(file)), want);
    }
    let out = omniwpt(&["pa-spectrum", "--out", d, "--steps", "4"]);
    assert!(out.status.success());
    assert_eq!(header(&dir.path().join("pa_spectrum.csv")), "duty,loss_db,suppression_db");
    let rows = std::fs::read_to_string(dir.path().join("pa_spectrum.csv")).unwrap().lines().count();
    assert_eq!(rows, 5);
}

#[test]
fn oracle_and_simulation_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let out = omniwpt(&["oracle-sweep", "--out", d, "--steps", "41", "--poses", "3"]);
    assert!(out.status.success());
    let summary: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["poses"], 4);
    assert_eq!(
        header(&dir.path().join("oracle.csv")),
        "pose,x_mm,y_mm,z_mm,axis_x,axis_y,axis_z,active_channels,pte_grid,pte_ae,pte_bound"
    );

    let out = omniwpt(&["simulate", "--out", d]);
    assert!(out.status.success());
    assert_eq!(
        header(&dir.path().join("run_log.csv")),
        "t_s,phase,current_A_1,current_A_2,current_A_3,duty_1,duty_2,duty_3,\
         polarity_1,polarity_2,polarity_3,pte,cumulative_delivered_J"
    );
    let summary: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(summary["interruption_fraction"].as_f64().unwrap() < 0.002);
}

#[test]
fn same_seed_gives_identical_files() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        let out = omniwpt(&["simulate", "--seed", "7", "--out", dir.path().to_str().unwrap()]);
        assert!(out.status.success());
    }
    let read = |d: &tempfile::TempDir| std::fs::read(d.path().join("run_log.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
}

#[test]
fn design_array_writes_a_cancelled_layout() {
    let dir = tempfile::tempdir().unwrap();
    let out = omniwpt(&["design-array", "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: Value = serde_json::from_slice(&out.stdout).unwrap();
    let d = summary["distance_mm"].as_f64().unwrap();
    assert!((20.4..=27.6).contains(&d));
    assert_eq!(summary["flagged"], false);
    let text = std::fs::read_to_string(dir.path().join("array.toml")).unwrap();
    assert_eq!(text.matches("[[coils]]").count(), 3);
}

#[test]
fn svg_format_is_supported() {
    let dir = tempfile::tempdir().unwrap();
    let out = omniwpt(&["sweep", "rotation", "--steps", "4", "--format", "svg", "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success());
    let svg = std::fs::read_to_string(dir.path().join("rotation.svg")).unwrap();
    assert!(svg.starts_with("<svg") || svg.starts_with("<?xml"));
}

#[test]
fn validate_scenario_accepts_the_default() {
    let out = omniwpt(&["validate-scenario"]);
    assert!(out.status.success());
    let summary: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["valid"], true);
    assert_eq!(summary["coils"], 3);
}

#[test]
fn scenario_errors_exit_with_two_and_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    let text = omniwpt::scenario::DEFAULT_SCENARIO.replacen("budget = ", "budget = -1.0\n# ", 1);
    std::fs::write(&path, text).unwrap();
    let out = omniwpt(&["validate-scenario", "--scenario", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_json(&out);
    assert_eq!(err["error"], "scenario");
    assert!(err["details"].as_array().unwrap().iter().any(|d| d["path"] == "budget"));

    std::fs::write(&path, "seed = [").unwrap();
    let out = omniwpt(&["validate-scenario", "--scenario", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_json(&out)["details"][0]["line"].as_u64().unwrap() >= 1);

    let out = omniwpt(&["validate-scenario", "--scenario", dir.path().join("missing.toml").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn usage_errors_exit_with_two() {
    let out = omniwpt(&["sweep", "sideways"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["error"], "usage");
    let out = omniwpt(&["simulate", "--activation-hz", "0"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_with_one() {
    let out = omniwpt(&["design-array", "--bracket", "50", "60", "--out", "/tmp"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_json(&out)["error"], "array_design");
}
