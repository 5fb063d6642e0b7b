use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn oplim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_oplim"))
        .args(args)
        .env("OPLIM_WORKERS", "1")
        .output()
        .expect("binary runs")
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!("{e}: {}\n{}", String::from_utf8_lossy(&out.stdout), String::from_utf8_lossy(&out.stderr))
    })
}

#[test]
fn analyze_diagonal_is_bounded() {
    let out = oplim(&["analyze", "--builtin", "diagonal-exp-inv-square", "--no-timestamp"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    let cert = &v["result"]["certificate"];
    assert_eq!(cert["verdict"], "bounded");
    let a = cert["analytic_norm_sq"].as_f64().unwrap();
    assert!((a - 5.18066).abs() < 1e-5);
    assert_eq!(cert["evidence"].as_array().unwrap().len(), 64);
    assert_eq!(v["config"]["seed"], 0xC0FFEE);
    assert_eq!(v["config"]["samples"], 1_000_000);
}

#[test]
fn analyze_example52_is_inconclusive_with_moments() {
    let out = oplim(&["analyze", "--builtin", "example-5.2", "--n-max", "16", "--no-timestamp"]);
    assert_eq!(out.status.code(), Some(2));
    let v = json(&out);
    let cert = &v["result"]["certificate"];
    assert_eq!(cert["verdict"], "inconclusive");
    assert!(cert["reason"].as_str().unwrap().starts_with("condition (iii)"));
    let ev = cert["evidence"].as_array().unwrap();
    assert!(ev.iter().all(|r| r["m2_exact"].is_number()));
    assert_eq!(ev[1]["ess_sup"], "+inf");
}

#[test]
fn analyze_identity_and_dense_criterion() {
    let out = oplim(&["analyze", "--builtin", "identity", "--n-max", "8", "--no-timestamp"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(json(&out)["result"]["certificate"]["norm_sq"], 1.0);
    let out = oplim(&["analyze", "--builtin", "example-5.2", "--n-max", "16", "--criterion", "dense", "--no-timestamp"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(json(&out)["result"]["certificate"]["verdict"], "densely-defined-certified");
}

#[test]
fn reports_are_byte_identical_without_timestamp() {
    let args = ["analyze", "--builtin", "triangular", "--n-max", "4", "--samples", "20000", "--no-timestamp"];
    let a = oplim(&args);
    let b = oplim(&args);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    let stamped = oplim(&args[..args.len() - 1]);
    assert!(json(&stamped)["timestamp"].is_u64());
}

#[test]
fn worker_count_does_not_change_results() {
    let run = |w: &str| {
        Command::new(env!("CARGO_BIN_EXE_oplim"))
            .args(["analyze", "--builtin", "hump", "--n-max", "7", "--samples", "50000", "--no-timestamp", "--workers", w])
            .output()
            .unwrap()
    };
    let a = json(&run("1"));
    let b = json(&run("3"));
    assert_eq!(a["result"], b["result"]);
    assert_eq!(a["result"]["certificate"]["verdict"], "unbounded-witness");
}

#[test]
fn verify_examples() {
    for id in ["reciprocal", "cyclic", "appendix-build", "example-5.2", "diagonal"] {
        let out = oplim(&["verify-example", id, "--no-timestamp"]);
        assert_eq!(out.status.code(), Some(0), "{id}: {}", String::from_utf8_lossy(&out.stdout));
        let v = json(&out);
        assert!(v["pass"].as_bool().unwrap());
    }
    let v = json(&oplim(&["verify-example", "cyclic", "--no-timestamp"]));
    assert!(v["result"]["data"]["cyclic"]["finding"].as_str().unwrap().contains("not densely defined"));
}

#[test]
fn unknown_example_lists_ids() {
    let out = oplim(&["verify-example", "nope"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("reciprocal") && err.contains("appendix-build"), "{err}");
}

#[test]
fn convergence_tables() {
    let out = oplim(&["convergence", "--builtin", "diagonal", "--samples", "10000", "--no-timestamp", "--format", "csv"]);
    assert_eq!(out.status.code(), Some(0));
    let csv = String::from_utf8(out.stdout).unwrap();
    assert!(csv.starts_with("series,n,value,stderr\n"));
    assert!(csv.lines().skip(1).all(|l| l.split(',').nth(2) == Some("0")), "{csv}");

    let out = oplim(&["convergence", "--builtin", "example-5.2", "--samples", "20000", "--no-timestamp"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    let rep = &v["result"]["report"];
    assert_eq!(rep["horizon"], 3);
    for row in rep["rows"].as_array().unwrap() {
        if row["m"].as_u64().unwrap() >= 3 {
            assert_eq!(row["distance"], 0.0);
        }
    }

    let out = oplim(&["convergence", "--builtin", "geometric-tail"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("horizon undefined"));
}

#[test]
fn norm_command() {
    let out = oplim(&["norm", "--builtin", "example-5.2", "--n-max", "4", "--no-timestamp"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    let rows = v["result"]["rows"].as_array().unwrap();
    assert_eq!(rows[0]["norm"]["value"], 1.0);
    assert!(rows[1]["norm"]["lower"].as_f64().unwrap() > 1.0);
    assert_eq!(rows[3]["det"], 1.0);
    let out = oplim(&["norm", "--builtin", "hump"]);
    assert_eq!(out.status.code(), Some(1));
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.display().to_string()
}

#[test]
fn spec_files() {
    let dir = tempfile::tempdir().unwrap();
    let diag = write(dir.path(), "diag.json", r#"{"schema":"oplim-symbol/1","variant":"diagonal","diag":[0.5,0.8]}"#);
    let out = oplim(&["norm", "--spec", &diag, "--no-timestamp"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    let rows = v["result"]["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[1]["norm"]["value"], 0.8);
    assert!((rows[1]["det"].as_f64().unwrap() - 0.4).abs() < 1e-15);

    let bad = write(dir.path(), "bad.json", "{\n  \"schema\": \"oplim-symbol/1\",\n  \"variant\": \"diagonal\",\n  \"diag\": [1, \"x\"]\n}");
    let out = oplim(&["analyze", "--spec", &bad]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("schema error at line 4"), "{err}");
}

#[test]
fn build_densities_round_trips_through_spec() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("plan.json");
    let report = dir.path().join("report.json");
    let out = oplim(&[
        "build-densities",
        "--no-humps",
        "--n-max",
        "8",
        "--emit-spec",
        spec.to_str().unwrap(),
        "--out",
        report.to_str().unwrap(),
        "--no-timestamp",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert!(v["result"]["validation"]["checks"].as_array().unwrap().iter().all(|c| c["pass"] == true));
    let out = oplim(&["analyze", "--spec", spec.to_str().unwrap(), "--samples", "20000", "--no-timestamp"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(json(&out)["result"]["certificate"]["verdict"], "bounded");
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(oplim(&["analyze"]).status.code(), Some(1));
    assert_eq!(oplim(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(oplim(&["--help"]).status.code(), Some(0));
}
