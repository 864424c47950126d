use std::path::Path;
use std::process::{Command, Output};

fn prewarp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_prewarp")).args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_prints_one_report_per_cell() {
    let o = prewarp(&["run", "--fn", "ridge2d", "--n", "200", "--n-test", "40", "--methods", "KNN,S-KNN", "--reps", "2", "--bags", "1", "--bag-size", "100", "--mc", "100"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8_lossy(&o.stdout).into_owned();
    let lines: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 4);
    for l in &lines {
        assert!(l["mse"].as_f64().unwrap() >= 0.0);
        assert!(l["seconds"].is_null());
    }
    assert!(stderr(&o).contains("config:"));
}

#[test]
fn bad_method_label_is_a_usage_error() {
    let o = prewarp(&["run", "--fn", "ridge2d", "--n", "100", "--methods", "X-KNN"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("KNN"), "{}", stderr(&o));
}

#[test]
fn unknown_flag_exits_one() {
    assert_eq!(prewarp(&["run", "--bogus"]).status.code(), Some(1));
}

#[test]
fn help_exits_zero() {
    let o = prewarp(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn missing_csv_is_a_data_error() {
    let o = prewarp(&["gen-data", "--csv", "/nonexistent/data.csv"]);
    assert_ne!(o.status.code(), Some(0));
    let o = prewarp(&["warp", "--csv", "/nonexistent/data.csv", "--method", "S"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn warp_round_trips_through_inspect() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("w.json");
    let o = prewarp(&["warp", "--fn", "ridge2d", "--n", "300", "--method", "L", "--bags", "1", "--bag-size", "300", "--mc", "500", "--out", path(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let written = std::fs::read_to_string(&out).unwrap();
    let o = prewarp(&["inspect", path(&out)]);
    assert!(o.status.success());
    assert_eq!(String::from_utf8(o.stdout).unwrap(), written);

    let doc: serde_json::Value = serde_json::from_str(&written).unwrap();
    let lambda: Vec<f64> = doc["eigenvalues"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert!(lambda[0] / lambda[1] >= 50.0, "{lambda:?}");
}

#[test]
fn truncate_and_predict_from_files() {
    let dir = tempfile::tempdir().unwrap();
    let train = dir.path().join("train.csv");
    let test = dir.path().join("test.csv");
    let warp = dir.path().join("w.json");
    let cut = dir.path().join("w1.json");
    assert!(prewarp(&["gen-data", "--fn", "ridge2d", "--n", "300", "--seed", "1", "--out", path(&train)]).status.success());
    assert!(prewarp(&["gen-data", "--fn", "ridge2d", "--n", "50", "--seed", "2", "--out", path(&test)]).status.success());
    let o = prewarp(&["warp", "--csv", path(&train), "--method", "S", "--bags", "1", "--bag-size", "300", "--out", path(&warp)]);
    assert!(o.status.success(), "{}", stderr(&o));

    let o = prewarp(&["truncate", "--csv", path(&train), "--warp", path(&warp), "--out", path(&cut)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let t: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(t["r"].as_u64().unwrap(), 1);

    let o = prewarp(&["predict", "--train", path(&train), "--test", path(&test), "--warp", path(&cut), "--model", "KNN"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("mse ="));
    assert_eq!(String::from_utf8(o.stdout).unwrap().lines().count(), 50);
}
