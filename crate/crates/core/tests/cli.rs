//! Smoke tests for the command-line interface.

use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tesp"))
}

#[test]
fn bench_reruns_are_byte_identical_without_timing() {
    let dir = tempfile::tempdir().unwrap();
    let out_a = dir.path().join("a.jsonl");
    let out_b = dir.path().join("b.jsonl");
    for out in [&out_a, &out_b] {
        let status = bin()
            .args([
                "bench",
                "--dims",
                "10,5,5,10,3",
                "--method",
                "nterk-both,aterk-both-md",
                "--trials",
                "3",
                "--seed",
                "42",
                "--no-timing",
                "--out",
            ])
            .arg(out)
            .status()
            .unwrap();
        assert!(status.success());
    }
    let a = std::fs::read(&out_a).unwrap();
    let b = std::fs::read(&out_b).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, b, "seeded benchmark output is not reproducible");
    let text = String::from_utf8(a).unwrap();
    assert_eq!(text.lines().count(), 2, "one JSON line per method");
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["trials"], 3);
        assert_eq!(v["mean_cpu_s"], 0.0);
    }
}

#[test]
fn solve_writes_a_trace() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("trace.csv");
    let output = bin()
        .args([
            "solve",
            "--dims",
            "12,6,6,12,3",
            "--method",
            "aterk-both-md",
            "--seed",
            "7",
            "--tol",
            "1e-4",
            "--out",
        ])
        .arg(&out)
        .output()
        .unwrap();
    assert!(output.status.success());
    let text = std::fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "iter,rrn,err_fmn,i,j,elapsed_s");
    assert!(lines.next().unwrap().starts_with("0,"));
}

#[test]
fn analyze_reports_factors() {
    let output = bin()
        .args([
            "analyze",
            "--dims",
            "5,3,3,5,3",
            "--method",
            "terk-both",
            "--seed",
            "3",
        ])
        .output()
        .unwrap();
    assert!(output.status.success());
    let text = String::from_utf8(output.stdout).unwrap();
    assert!(text.contains("delta_p_sq="), "missing factor line in: {text}");
    assert!(text.contains("rho_closed_form="), "missing closed form in: {text}");
}
