use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nica-kms"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

const MINIMAL: &str = "\
[algebra]
blocks = 1

[system]
n = 2

[generator 1]
identity = true

[generator 2]
identity = true

[run]
analyses = kms-verify
";

#[test]
fn minimal_config_has_no_violations() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "job.cfg", MINIMAL);
    let out = run(&["run", &cfg]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = String::from_utf8(out.stdout).unwrap();
    assert!(report.contains("defaults applied: lambda, beta, m, d, random, epsilon, tol"), "{report}");
    assert!(report.contains("violations: 0"), "{report}");
    assert!(report.contains("faults: 0"));
}

#[test]
fn negative_direction_embeds_certificate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "job.cfg", MINIMAL);
    let out = run(&["run", &cfg, "--set", "params.lambda=1,-1"]);
    assert!(out.status.success());
    let report = String::from_utf8(out.stdout).unwrap();
    assert!(report.contains("regime: empty"), "{report}");
    assert!(report.contains("no KMS states: direction 2"), "{report}");
    assert!(report.contains("certificate checks: true"));
}

#[test]
fn malformed_row_is_rejected_with_line() {
    let dir = tempfile::tempdir().unwrap();
    let text = MINIMAL.replace("[generator 1]\nidentity = true", "[generator 1]\nrow = 1, x");
    let cfg = write(dir.path(), "job.cfg", &text);
    let out = run(&["run", &cfg]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 8") && err.contains("`row`"), "{err}");
    assert!(out.stdout.is_empty());
}

#[test]
fn invalid_endomorphism_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let text = MINIMAL.replace("[generator 1]\nidentity = true", "[generator 1]\nrow = 2");
    let cfg = write(dir.path(), "job.cfg", &text);
    let out = run(&["run", &cfg]);
    assert!(!out.status.success());
}

#[test]
fn report_file_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "job.cfg", MINIMAL);
    let path = dir.path().join("out.txt");
    let out = run(&["run", &cfg, "--report", path.to_str().unwrap(), "--seed", "42"]);
    assert!(out.status.success());
    assert!(out.stdout.is_empty());
    let report = std::fs::read_to_string(&path).unwrap();
    assert!(report.starts_with("nica-kms report\nseed: 42\n"), "{report}");
}

#[test]
fn same_seed_same_report() {
    let cfg = concat!(env!("CARGO_MANIFEST_DIR"), "/examples/doubling.cfg");
    let a = run(&["run", cfg, "--seed", "3"]);
    let b = run(&["run", cfg, "--seed", "3"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
}
