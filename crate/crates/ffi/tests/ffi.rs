use std::ffi::{CStr, CString};
use std::ptr;

use exitflow_ffi::*;

const BALL: &str = r#"
schema = 1
name = "ffi_ball"
[domain]
kind = "ball"
center = [0.0, 0.0]
radius = 1.0
[cost]
kind = "zero"
[dynamics]
kind = "profile"
profile = { kind = "constant", value = 1.0 }
[grid]
h = 0.0625
[verify]
starts = 50
"#;

fn parse(text: &str) -> (ExfStatus, *mut ExfConfig) {
    let c = CString::new(text).unwrap();
    let mut cfg = ptr::null_mut();
    let s = unsafe { exf_config_parse(c.as_ptr(), &mut cfg) };
    (s, cfg)
}

#[test]
fn solve_and_query_through_handles() {
    let (s, cfg) = parse(BALL);
    assert_eq!(s, ExfStatus::Ok);
    let mut sol = ptr::null_mut();
    assert_eq!(unsafe { exf_solve(cfg, &mut sol) }, ExfStatus::Ok);
    let mut v = 0.0;
    assert_eq!(unsafe { exf_solution_value(sol, 0.0, 0.5, 0.0, &mut v) }, ExfStatus::Ok);
    assert!((v - 0.5).abs() < 2.0 * 0.0625, "{v}");
    let (mut nx, mut ny, mut nt) = (0, 0, 0);
    assert_eq!(unsafe { exf_solution_shape(sol, &mut nx, &mut ny, &mut nt) }, ExfStatus::Ok);
    assert_eq!(nx, ny);
    assert!(nt > 1);
    let (mut tau, mut zx, mut zy, mut cost) = (0.0, 0.0, 0.0, 0.0);
    let s = unsafe {
        exf_solution_optimal_exit(sol, 0.0, 0.5, 0.0, &mut tau, &mut zx, &mut zy, &mut cost)
    };
    assert_eq!(s, ExfStatus::Ok);
    assert!((tau - 0.5).abs() < 0.1 && (zx - 1.0).abs() < 0.05 && zy.abs() < 0.05);
    unsafe {
        exf_solution_free(sol);
        exf_config_free(cfg);
    }
}

#[test]
fn errors_carry_codes_and_messages() {
    let (s, cfg) = parse(&BALL.replace("radius = 1.0", "radius = -1.0"));
    assert_eq!(s, ExfStatus::ConfigInvalid);
    assert!(cfg.is_null());
    let msg = unsafe { CStr::from_ptr(exf_last_error()) }.to_str().unwrap();
    assert!(msg.contains("domain"), "{msg}");
    let (_, good) = parse(BALL);
    assert_eq!(unsafe { exf_config_set_seed(good, u64::MAX) }, ExfStatus::ConfigInvalid);
    assert_eq!(unsafe { exf_config_set_seed(good, 42) }, ExfStatus::Ok);
    unsafe { exf_config_free(good) };
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { exf_solve(ptr::null(), &mut out) }, ExfStatus::NullPointer);
    assert_eq!(unsafe { exf_config_parse(ptr::null(), &mut out.cast()) }, ExfStatus::NullPointer);
}

#[test]
fn verify_pipeline_runs_through_the_abi() {
    let (_, cfg) = parse(BALL);
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().to_str().unwrap()).unwrap();
    let s = unsafe { exf_run(cfg, ExfCommand::Verify, path.as_ptr()) };
    assert_eq!(s, ExfStatus::Ok);
    assert!(dir.path().join("manifest.json").exists());
    assert!(dir.path().join("verify.json").exists());
    unsafe { exf_config_free(cfg) };
    let v = unsafe { CStr::from_ptr(exf_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}
