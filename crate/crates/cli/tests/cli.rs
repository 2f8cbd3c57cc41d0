use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn hqsdp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hqsdp"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn read(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn generate_solve_and_certify_a_nested_instance() {
    let dir = tempfile::tempdir().unwrap();
    let inst = dir.path().join("nested.json");
    let report = dir.path().join("report.json");
    let cand = dir.path().join("cand.json");
    let cert = dir.path().join("cert.json");
    let s = |p: &Path| p.to_str().unwrap().to_owned();

    let out = hqsdp(&[
        "gen",
        "--family",
        "appendixE",
        "--params",
        r#"{"d": 4, "k": 2, "coefficients": [[1, 1], [0, 1]]}"#,
        "--out",
        &s(&inst),
        "--seed",
        "3",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert_eq!(read(&inst)["meta"]["optimal_value"].as_f64().unwrap(), 3.0);

    let out = hqsdp(&["solve-sdp", "--instance", &s(&inst), "--out", &s(&report)]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let r = read(&report);
    assert_eq!(r["status"], "Optimal");
    assert!((r["raw_relaxation_value"].as_f64().unwrap() - 3.0).abs() < 1e-6);

    std::fs::write(&cand, r["candidate"].to_string()).unwrap();
    let out = hqsdp(&[
        "certify",
        "--instance",
        &s(&inst),
        "--candidate",
        &s(&cand),
        "--out",
        &s(&cert),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert_eq!(read(&cert)["status"], "CertifiedGlobal");
}

#[test]
fn diag_sweep_writes_all_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let out = hqsdp(&[
        "diag-sweep",
        "--d",
        "4",
        "--k",
        "2",
        "--scales",
        "0.0001",
        "--trials",
        "3",
        "--out-dir",
        d,
        "--seed",
        "1",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    for f in ["diag_sweep.csv", "diag_records.jsonl", "diag_plot.tsv"] {
        assert!(dir.path().join(f).exists(), "missing {f}");
    }
    let jsonl = std::fs::read_to_string(dir.path().join("diag_records.jsonl")).unwrap();
    assert_eq!(jsonl.lines().count(), 3);
}

#[test]
fn failing_external_solver_sets_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let inst = dir.path().join("i.json");
    let s = inst.to_str().unwrap();
    assert!(hqsdp(&[
        "gen",
        "--family",
        "randpsd",
        "--params",
        r#"{"d": 3, "k": 1}"#,
        "--out",
        s
    ])
    .status
    .success());

    let args = [
        "solve-sdp",
        "--instance",
        s,
        "--backend",
        "external",
        "--external-cmd",
        "sh",
        "-c",
        "exit 1",
    ];
    assert_eq!(hqsdp(&args).status.code(), Some(2));

    let mut tolerated = vec!["--tolerate-failures"];
    tolerated.extend(args);
    assert!(hqsdp(&tolerated).status.success());
}

#[test]
fn malformed_params_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = hqsdp(&[
        "gen",
        "--family",
        "randpsd",
        "--params",
        "not json",
        "--out",
        dir.path().join("x.json").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
}
