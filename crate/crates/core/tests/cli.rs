//! End-to-end checks of the `radau-hp` binary: output determinism and
//! exit codes.

use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_radau-hp"))
}

#[test]
fn tables_output_is_deterministic() {
    let run = || {
        let out = bin()
            .args(["tables", "--n-list", "1..8,25"])
            .output()
            .expect("binary runs");
        assert!(out.status.success());
        out.stdout
    };
    let a = run();
    let b = run();
    assert_eq!(a, b);
    let text = String::from_utf8(a).unwrap();
    assert!(text.starts_with("n,p1_norm,"));
    assert_eq!(text.lines().count(), 10);
}

#[test]
fn sweep_output_is_deterministic_and_reports_fits() {
    let run = || {
        let out = bin()
            .args([
                "sweep-p",
                "--problem",
                "example2",
                "--mesh",
                "0,0.25,0.75,1",
                "--n-list",
                "3,5,7",
                "--tol",
                "1e-9",
            ])
            .output()
            .expect("binary runs");
        assert!(out.status.success(), "exit: {:?}", out.status);
        out.stdout
    };
    let a = run();
    assert_eq!(a, run());
    let text = String::from_utf8(a).unwrap();
    assert!(text.contains("# accuracy_floor"));
}

#[test]
fn nonconverged_samples_fail_unless_partial_allowed() {
    let args = [
        "sweep-p",
        "--problem",
        "example1",
        "--n-list",
        "4,5",
        "--max-iter",
        "1",
    ];
    let strict = bin().args(args).output().expect("binary runs");
    assert_eq!(strict.status.code(), Some(2));
    let partial = bin()
        .args(args)
        .arg("--allow-partial")
        .output()
        .expect("binary runs");
    assert!(partial.status.success());
}

#[test]
fn unknown_problem_is_an_error() {
    let out = bin()
        .args(["diagnose", "--problem", "example9", "--k", "4"])
        .output()
        .expect("binary runs");
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("example9"));
}

#[test]
fn json_format_parses() {
    let out = bin()
        .args([
            "interp",
            "--n-list",
            "4,6,8",
            "--function",
            "exp",
            "--format",
            "json",
        ])
        .output()
        .expect("binary runs");
    assert!(out.status.success());
    let value: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(value["axis"], "interp");
    assert_eq!(value["samples"].as_array().unwrap().len(), 3);
}
