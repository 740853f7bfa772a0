//! Loads the built extension module into the system interpreter and runs
//! the Python smoke script against it.

use std::path::{Path, PathBuf};
use std::process::Command;

fn extension() -> PathBuf {
    // target/<profile>/deps/smoke-<hash> -> target/<profile>/libzetaloop.so
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().join("libzetaloop.so")
}

#[test]
fn python_smoke_script() {
    if Command::new("python3").arg("--version").output().is_err() {
        eprintln!("python3 not available, skipping");
        return;
    }
    let so = extension();
    assert!(so.exists(), "{} not built", so.display());
    let dir = tempfile::tempdir().unwrap();
    std::fs::copy(&so, dir.path().join("zetaloop.so")).unwrap();
    let script = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../python/smoke_test.py");
    let out = Command::new("python3")
        .arg(&script)
        .env("PYTHONPATH", dir.path())
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8_lossy(&out.stdout).contains("smoke test ok"));
}
