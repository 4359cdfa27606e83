//! End-to-end runs of the `platehomog` binary.

use platehomog::sweep_io::{Table, TableKind};
use std::path::Path;
use std::process::{Command, Output};

const ISO: &str = r#"
mesh = [2, 2, 8]

[material]
phases = [{ kind = "isotropic", lambda = 1.0, mu = 1.0 }]
"#;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_platehomog")).args(args).env_remove("PLATEHOMOG_THREADS").output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn validate_reports_bounds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "iso.toml", ISO);
    let out = run(&["validate", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("planar_symmetric=true"), "{stdout}");
}

#[test]
fn homogenise_writes_plate_tensors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "iso.toml", ISO);
    let out_dir = dir.path().join("out");
    let out = run(&["homogenise", "--config", &cfg, "--out", out_dir.to_str().unwrap(), "--threads", "1"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let t = Table::load(&out_dir.join("homogenise.csv"), Some(TableKind::Homog)).unwrap();
    let l2 = t.column_f64("L2_11").unwrap()[0];
    // plane-stress modulus 4 mu (lambda + mu) / (lambda + 2 mu) of the unit isotropic plate
    assert!((l2 - 8.0 / 3.0).abs() < 1e-10, "L2_11 = {l2}");
    assert!(out_dir.join("homogenise.json").exists());
}

#[test]
fn mesh_override_is_applied() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "iso.toml", ISO);
    let out_dir = dir.path().join("out");
    let out = run(&["homogenise", "--config", &cfg, "--out", out_dir.to_str().unwrap(), "--mesh", "2,2,4"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("mesh: [2, 2, 4]"));
}

#[test]
fn plan_mismatch_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "k.toml", &format!("plan = \"korn\"\n{ISO}"));
    let out = run(&["homogenise", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("korn"));
}

#[test]
fn unknown_keys_and_subcommands_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.toml", &format!("{ISO}\nbogus = 3\n"));
    assert_eq!(run(&["homogenise", "--config", &cfg]).status.code(), Some(1));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["validate", "--config", "/nonexistent/file.toml"]).status.code(), Some(1));
}
