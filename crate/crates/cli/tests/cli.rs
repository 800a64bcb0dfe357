use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::Value;

fn depstat(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_depstat"))
        .args(args)
        .env_remove("DEPSTAT_THREADS")
        .output()
        .unwrap();
    (
        out.status.code().unwrap(),
        String::from_utf8(out.stdout).unwrap(),
        String::from_utf8(out.stderr).unwrap(),
    )
}

fn write_rows(dir: &Path, name: &str, rows: &[Vec<f64>]) -> PathBuf {
    let path = dir.join(name);
    let mut text = String::from("x,y,z\n");
    for r in rows {
        let cells: Vec<String> = r.iter().map(|v| format!("{v:?}")).collect();
        text.push_str(&cells.join(","));
        text.push('\n');
    }
    std::fs::write(&path, text).unwrap();
    path
}

fn data(n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| {
            let t = i as f64;
            let x = (t * 0.61).sin();
            vec![x, x * x + 0.1 * (t * 2.3).cos(), (t * 1.3).cos()]
        })
        .collect()
}

#[test]
fn dcov_output_schema() {
    let dir = tempfile::tempdir().unwrap();
    let p = write_rows(dir.path(), "d.csv", &data(30));
    let (code, out, _) = depstat(&["dcov", "--input", p.to_str().unwrap(), "--blocks", "0;1", "--reps", "999", "--seed", "42"]);
    assert_eq!(code, 0);
    let v: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["schema_version"], 1);
    assert_eq!(v["method"], "dcov");
    assert_eq!(v["reps"], 999);
    assert_eq!(v["seed"], 42);
    assert_eq!(v["n"], 30);
    assert_eq!(v["alpha"].as_f64(), Some(1.0));
    assert!(v["statistic"].as_f64().unwrap() > 0.0);
    let p = v["p_value"].as_f64().unwrap();
    assert!(p > 0.0 && p <= 1.0);
}

#[test]
fn rank_flag_statistic_survives_cubing() {
    let dir = tempfile::tempdir().unwrap();
    let rows = data(25);
    let cubed: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|v| v * v * v).collect()).collect();
    let a = write_rows(dir.path(), "a.csv", &rows);
    let b = write_rows(dir.path(), "b.csv", &cubed);
    let stat = |p: &Path| {
        let (code, out, _) = depstat(&["dcov", "--input", p.to_str().unwrap(), "--blocks", "0;1", "--rank", "--seed", "1", "--reps", "19"]);
        assert_eq!(code, 0);
        serde_json::from_str::<Value>(&out).unwrap()["statistic"].clone()
    };
    assert_eq!(stat(&a), stat(&b));
}

#[test]
fn mobius_reports_four_subsets() {
    let dir = tempfile::tempdir().unwrap();
    let p = write_rows(dir.path(), "d3.csv", &data(20));
    let (code, out, _) = depstat(&["mobius", "--input", p.to_str().unwrap(), "--blocks", "0;1;2", "--reps", "49", "--seed", "5"]);
    assert_eq!(code, 0);
    let v: Value = serde_json::from_str(&out).unwrap();
    let subsets = v["subsets"].as_array().unwrap();
    assert_eq!(subsets.len(), 4);
    assert_eq!(subsets[3]["subset"], serde_json::json!([0, 1, 2]));
    assert!(v["combined_p_value"].as_f64().is_some());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(depstat(&["nonsense"]).0, 3);
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "x,y\n1,2\n3,abc\n").unwrap();
    let (code, _, err) = depstat(&["dcov", "--input", bad.to_str().unwrap(), "--seed", "1"]);
    assert_eq!(code, 2);
    assert!(err.contains("y"), "{err}");
    let good = write_rows(dir.path(), "g.csv", &data(12));
    let g = good.to_str().unwrap();
    assert_eq!(depstat(&["dcov", "--input", g, "--blocks", "0;7", "--seed", "1"]).0, 2);
    assert_eq!(depstat(&["dcov", "--input", g, "--blocks", "0;1;2", "--seed", "1"]).0, 3);
    assert_eq!(depstat(&["dcov", "--input", g, "--seed", "1"]).0, 2);
    assert_eq!(depstat(&["dcov", "--input", g, "--alpha", "0", "--seed", "1"]).0, 3);
    assert_eq!(depstat(&["serial", "--input", g, "--blocks", "0", "--lags", "0"]).0, 3);
    assert_eq!(depstat(&["embed", "--input", g, "--blocks", "0", "--window", "9"]).0, 3);
    assert_eq!(depstat(&["calibrate", "--model", "quadratic:0.3", "--tests", "dcov"]).0, 3);
}

#[test]
fn output_and_csv_files() {
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("power.json");
    let csv = dir.path().join("power.csv");
    let (code, out, _) = depstat(&[
        "power", "--model", "gaussian-rho:0.5,quadratic:0.3+cube", "--n", "20", "--tests", "dcov,pearson",
        "--runs", "6", "--reps", "19", "--seed", "3", "--csv", csv.to_str().unwrap(), "--output", json.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    assert!(out.is_empty());
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(v["rows"].as_array().unwrap().len(), 4);
    let table = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(table.lines().count(), 5);
    assert!(table.contains("quadratic:0.3+cube"));
}

#[test]
fn residual_study_single_run_has_no_verdict() {
    let (code, out, _) = depstat(&["residual-study", "--phi", "-0.4", "--n", "50", "--runs", "1", "--reps", "19", "--seed", "2"]);
    assert_eq!(code, 0);
    let v: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["insufficient_runs"], true);
    assert!(v["bootstrap_calibrated"].is_null());
}

#[test]
fn serial_residual_and_known_mean() {
    let dir = tempfile::tempdir().unwrap();
    let p = write_rows(dir.path(), "s.csv", &data(60));
    let (code, out, _) = depstat(&[
        "serial", "--input", p.to_str().unwrap(), "--blocks", "2", "--lags", "2", "--residual-ar1", "--mu", "0", "--reps", "29", "--seed", "4",
    ]);
    assert_eq!(code, 0);
    let v: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["fit"]["mu"], serde_json::json!([0.0]));
    assert_eq!(v["spectrum"]["values"].as_array().unwrap().len(), 2);
}
