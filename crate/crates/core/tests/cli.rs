use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const COMPACT: &str = r#"
[physical]

[numerics]
dy_nm = 4.0
dt_fs = 10.0
window_width_nm = 160.0

[blueprint]
layout.gap_nm = 30.0
layout.barrier_length_nm = 20.0
layout.ramp_length_nm = 40.0
layout.plateau_length_nm = 60.0
coupler_mode = "matrix"

[protocol]
calibrate_dynamic = false

[output]
"#;

fn teleport(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_teleport")).args(args).current_dir(dir).output().unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("run.toml");
    fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn run_writes_payloads_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), COMPACT);
    let out = tmp.path().join("out");
    let o = teleport(&["run", &cfg, "--out", out.to_str().unwrap()], tmp.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for name in ["result.json", "outcomes.csv", "profile.csv", "manifest.json"] {
        assert!(out.join(name).exists(), "missing {name}");
    }
    let outcomes = fs::read_to_string(out.join("outcomes.csv")).unwrap();
    assert_eq!(outcomes.lines().count(), 5);
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn unknown_key_exits_with_config_status() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &COMPACT.replace("dy_nm", "dy"));
    let o = teleport(&["run", &cfg, "--out", "out"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("dy"));
}

#[test]
fn missing_section_exits_with_config_status() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[physical]\n[numerics]\n");
    assert_eq!(teleport(&["run", &cfg, "--out", "out"], tmp.path()).status.code(), Some(2));
}

#[test]
fn missing_file_exits_with_config_status() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(teleport(&["run", "absent.toml"], tmp.path()).status.code(), Some(2));
}

#[test]
fn rank_overflow_exits_with_numerical_status() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &COMPACT.replace("[protocol]\n", "[protocol]\nrank_limit = 1\n"));
    let o = teleport(&["run", &cfg, "--out", "out"], tmp.path());
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn describe_lists_elements() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), COMPACT);
    let o = teleport(&["blueprint", "describe", &cfg], tmp.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("t12"), "{text}");
}
