//! End-to-end runs of the `amalgam-lab` binary.

use std::path::Path;
use std::process::{Command, Output};

use amalgam_core::grid::{sample, GridSpec};
use amalgam_core::io::{read_field, write_field};

fn lab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_amalgam-lab")).args(args).output().expect("binary runs")
}

fn bump_field(path: &Path) {
    let s = GridSpec::new(1, 8, 64, 0).unwrap();
    let f = sample(s, |x| {
        let y = x[0] / 3.0;
        if y.abs() < 1.0 { (-1.0 / (1.0 - y * y)).exp() * (1.0 + (4.0 * x[0]).sin()) } else { 0.0 }
    })
    .unwrap();
    write_field(path, &f).unwrap();
}

#[test]
fn norms_suite_writes_a_passing_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = lab(&["norms", "--corpus-scale", "0.05", "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("PASS") && !stdout.contains("FAIL"));
    let run = std::fs::read_dir(dir.path()).unwrap().next().unwrap().unwrap().path();
    assert!(run.join("report.json").exists() && run.join("tables.csv").exists());
}

#[test]
fn stale_fixture_is_rejected_before_running() {
    let dir = tempfile::tempdir().unwrap();
    let fx = dir.path().join("fx.json");
    let o = dir.path().to_str().unwrap();
    let rec = lab(&["norms", "--corpus-scale", "0.05", "--record-fixtures", "--fixtures", fx.to_str().unwrap(), "--out", o]);
    assert!(rec.status.success());
    let ok = lab(&["norms", "--corpus-scale", "0.05", "--fixtures", fx.to_str().unwrap(), "--out", o]);
    assert!(ok.status.success());
    let stale = lab(&["norms", "--corpus-scale", "0.05", "--seed", "8", "--fixtures", fx.to_str().unwrap(), "--out", o]);
    assert_eq!(stale.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&stale.stderr).contains("config hash"));
    let missing = lab(&["dual", "--fixtures", fx.to_str().unwrap(), "--out", o]);
    assert!(String::from_utf8_lossy(&missing.stderr).contains("fixture file missing"));
}

#[test]
fn invalid_config_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let out = lab(&["norms", "--M", "48", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("grid.per_unit"));
}

#[test]
fn decompose_and_reconstruct_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("f.bin");
    bump_field(&input);
    let dec = dir.path().join("dec");
    let out = lab(&["decompose", "--input", input.to_str().unwrap(), "--output", dec.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dec.join("manifest.json").exists());
    let rec = dir.path().join("r.bin");
    assert!(lab(&["reconstruct", "--input", dec.to_str().unwrap(), "--output", rec.to_str().unwrap()]).status.success());
    let (f, r) = (read_field(&input).unwrap(), read_field(&rec).unwrap());
    let err = f.values.iter().zip(&r.values).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    assert!(err <= 1e-10 * f.sup_norm());
}

#[test]
fn field_verbs_print_json() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("f.bin");
    bump_field(&input);
    let out = lab(&["norm", input.to_str().unwrap(), "--q", "0.5", "--p", "0.5"]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["hloc"].as_f64().unwrap() > 0.0 && v["amalgam"].as_f64().unwrap() > 0.0);
    let hl = dir.path().join("hl.csv");
    let out = lab(&["maximal-of", input.to_str().unwrap(), "--hl-output", hl.to_str().unwrap()]);
    assert!(out.status.success() && hl.exists());
    let out = lab(&["dual-norm", input.to_str().unwrap(), "--q", "1", "--p", "1"]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["value"].as_f64().unwrap() > 0.0);
}

#[test]
fn psido_operations() {
    let dir = tempfile::tempdir().unwrap();
    let sym = dir.path().join("sym.json");
    std::fs::write(&sym, r#"{"template": {"kind": "mixed", "a": 0.5}}"#).unwrap();
    let out = lab(&["psido", "seminorms", "--symbol", sym.to_str().unwrap()]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["in_class"], serde_json::Value::Bool(true));
    let input = dir.path().join("f.bin");
    bump_field(&input);
    let (a, b) = (dir.path().join("a.bin"), dir.path().join("b.bin"));
    assert!(lab(&["psido", "apply", "--symbol", sym.to_str().unwrap(), "--input", input.to_str().unwrap(), "--output", a.to_str().unwrap()]).status.success());
    assert!(lab(&["psido", "apply", "--kernel-path", "--symbol", sym.to_str().unwrap(), "--input", input.to_str().unwrap(), "--output", b.to_str().unwrap()])
        .status
        .success());
    let (fa, fb) = (read_field(&a).unwrap(), read_field(&b).unwrap());
    let err = fa.values.iter().zip(&fb.values).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
    assert!(err <= 1e-8 * fa.sup_norm());
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"template": {"kind": "nope"}}"#).unwrap();
    let out = lab(&["psido", "seminorms", "--symbol", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}
