use std::path::{Path, PathBuf};
use std::process::Command;

/// `target/<profile>`, where cargo leaves the shared library.
fn artifact_dir() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    exe.parent().and_then(Path::parent).unwrap().to_path_buf()
}

#[test]
fn header_compiles_and_links_from_c() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR"));
    let header = root.join("include/exitflow.h");
    assert!(header.exists(), "cbindgen header missing");
    let lib_dir = artifact_dir();
    if !lib_dir.join("libexitflow_ffi.so").exists() {
        eprintln!("shared library not found in {}, skipping", lib_dir.display());
        return;
    }
    let out = tempfile::tempdir().unwrap();
    let bin = out.path().join("smoke");
    let compiled = Command::new("cc")
        .arg(root.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(root.join("include"))
        .arg("-L")
        .arg(&lib_dir)
        .args(["-lexitflow_ffi", "-lm", "-o"])
        .arg(&bin)
        .status();
    let Ok(status) = compiled else {
        eprintln!("no C compiler available, skipping");
        return;
    };
    assert!(status.success(), "C smoke program failed to compile");
    let run = Command::new(&bin).env("LD_LIBRARY_PATH", &lib_dir).output().unwrap();
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    assert!(String::from_utf8_lossy(&run.stdout).contains("ok"));
}
