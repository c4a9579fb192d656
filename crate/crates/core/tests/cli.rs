use std::path::Path;
use std::process::Command;

use exitflow::io::read_manifest;

fn exitflow() -> Command {
    Command::new(env!("CARGO_BIN_EXE_exitflow"))
}

fn config(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("configs")
        .join(format!("{name}.toml"))
        .to_string_lossy()
        .into_owned()
}

#[test]
fn solve_writes_value_tensor_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let status = exitflow()
        .args(["--quiet", "solve-hjb", "--config", &config("interval_two_exit"), "--out"])
        .arg(dir.path())
        .status()
        .unwrap();
    assert!(status.success());
    let m = read_manifest(dir.path()).unwrap();
    assert_eq!(m.command, "solve-hjb");
    assert_eq!(m.status, "ok");
    let names: Vec<&str> = m.files.iter().map(|f| f.path.as_str()).collect();
    for expected in ["metrics.json", "value.f64", "value.json"] {
        assert!(names.contains(&expected), "{expected} missing from {names:?}");
    }
}

#[test]
fn verify_passes_and_report_audits_the_directory() {
    let dir = tempfile::tempdir().unwrap();
    let status = exitflow()
        .args(["--quiet", "verify", "--config", &config("interval_two_exit"), "--seed", "11", "--out"])
        .arg(dir.path())
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    assert_eq!(read_manifest(dir.path()).unwrap().seed, 11);
    let out = exitflow().args(["report", "--out"]).arg(dir.path()).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("integrity: ok"), "{text}");
    assert!(text.contains("[pass] exit_time_bound_violations"), "{text}");

    std::fs::write(dir.path().join("verify.json"), "{}").unwrap();
    let out = exitflow().args(["report", "--out"]).arg(dir.path()).output().unwrap();
    assert!(String::from_utf8(out.stdout).unwrap().contains("integrity: 1 problem(s): verify.json"));
}

#[test]
fn invalid_config_exits_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    let text = std::fs::read_to_string(config("ball_k1")).unwrap().replace("h = 0.015625", "h = -1.0");
    std::fs::write(&bad, text).unwrap();
    let out = exitflow()
        .args(["--quiet", "solve-hjb", "--config"])
        .arg(&bad)
        .arg("--out")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("grid.h"));
}

#[test]
fn equilibrium_on_a_profile_config_leaves_a_failed_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = exitflow()
        .args(["--quiet", "equilibrium", "--config", &config("ball_k1"), "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let m = read_manifest(dir.path()).unwrap();
    assert_eq!(m.status, "FAILED");
    assert!(m.error.unwrap().contains("kernel"));
}
