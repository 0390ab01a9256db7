use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(format!("{name}.json"))
}

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_orlicz-fb"))
        .args(args)
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

#[test]
fn verify_writes_a_passing_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("power_p2_1d");
    let out = cli(&[
        "verify",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = dir.path().join("power_p2_1d/power_p2_1d_manifest.json");
    assert!(manifest.exists());

    let csv = dir.path().join("all.csv");
    let out = cli(&["report", manifest.to_str().unwrap(), "--out", csv.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("[power_law]"));
    assert!(csv.exists());
}

#[test]
fn invalid_config_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(config("power_p2_1d"))
        .unwrap()
        .replace(r#""lambda": 1.0"#, r#""lambda": -1.0"#);
    let path = dir.path().join("bad.json");
    std::fs::write(&path, text).unwrap();
    let out = cli(&[
        "solve",
        "--config",
        path.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("lambda"));
}

#[test]
fn bad_resolution_override_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("power_p2_1d");
    let out = cli(&[
        "solve",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
        "--resolutions",
        "100",
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn empty_report_succeeds_quietly() {
    let out = cli(&["report"]);
    assert_eq!(code(&out), 0);
    assert!(out.stdout.is_empty());
}

#[test]
fn check_phi_passes_for_a_power_law() {
    let cfg = config("power_p2_1d");
    let out = cli(&["check-phi", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
}
