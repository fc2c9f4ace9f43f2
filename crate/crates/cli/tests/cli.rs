use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn zakai(results: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_zakai")).args(args).env("ZAKAI_RESULTS", results).output().expect("spawn zakai")
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)))
}

fn manifest(results: &Path) -> Value {
    let dir = std::fs::read_dir(results).unwrap().next().unwrap().unwrap().path();
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn chen_check_exits_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let out = zakai(tmp.path(), &["verify", "chen", "--k", "4"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let s = stdout_json(&out);
    assert_eq!(s["pass"], true);
    assert_eq!(s["depth"], 4);
    let m = manifest(tmp.path());
    assert_eq!(m["subcommand"]["name"], "verify");
    assert!(m["config_hash"].as_str().unwrap().len() == 64);
}

#[test]
fn missing_model_field_exits_two_with_path() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.json");
    std::fs::write(&cfg, r#"{"model": {"kind": "affine", "drift_matrix": [[-1]], "drift_offset": [0], "diffusion": [[1]]}}"#).unwrap();
    let out = zakai(&tmp.path().join("results"), &["simulate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("model") && err.contains("sensors"), "{err}");
}

#[test]
fn unknown_key_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.json");
    std::fs::write(&cfg, r#"{"model": {"kind": "bm-1d"}, "knobs": {"levles": 2}}"#).unwrap();
    let out = zakai(&tmp.path().join("results"), &["expand", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("knobs.levles"));
}

#[test]
fn kalman_oracle_reports_z_score() {
    let tmp = tempfile::tempdir().unwrap();
    let out = zakai(tmp.path(), &["filter", "--preset", "linear-gaussian", "--oracle", "kalman"]);
    assert_eq!(out.status.code(), Some(0));
    let s = stdout_json(&out);
    assert!(s["estimate"]["pi_phi"].is_f64());
    assert!(s["oracle"]["mean"].is_f64());
    assert!(s["oracle"]["estimate_of_mean"]["pi_phi"].is_f64());
    let z = s["oracle"]["z_score"].as_f64().expect("z-score");
    assert!(z.abs() < 5.0, "z = {z}");
}

#[test]
fn kalman_oracle_rejects_nonlinear_model() {
    let tmp = tempfile::tempdir().unwrap();
    let out = zakai(tmp.path(), &["filter", "--preset", "cubic-sensor", "--oracle", "kalman"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn rerun_from_manifest_is_identical() {
    let first = tempfile::tempdir().unwrap();
    let out = zakai(first.path(), &["expand", "--preset", "cubic-sensor", "--seed", "7", "--levels", "3"]);
    assert_eq!(out.status.code(), Some(0));
    let dir = std::fs::read_dir(first.path()).unwrap().next().unwrap().unwrap().path();
    let second = tempfile::tempdir().unwrap();
    let out2 = zakai(second.path(), &["expand", "--config", dir.join("manifest.json").to_str().unwrap()]);
    assert_eq!(out2.status.code(), Some(0));
    assert_eq!(out.stdout, out2.stdout);
    assert_eq!(manifest(first.path()), manifest(second.path()));
    let dir2 = std::fs::read_dir(second.path()).unwrap().next().unwrap().unwrap().path();
    for f in ["levels.csv", "words.csv"] {
        assert_eq!(std::fs::read(dir.join(f)).unwrap(), std::fs::read(dir2.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn every_subcommand_writes_a_manifest() {
    let runs: [&[&str]; 8] = [
        &["simulate", "--preset", "cubic-sensor"],
        &["robust", "--preset", "linear-gaussian", "--level", "2"],
        &["signature", "--preset", "bm-1d", "--k", "3"],
        &["gradient", "--preset", "bm-1d", "--target", "heat"],
        &["verify", "neoclassical"],
        &["verify", "extension", "--k", "3"],
        &["verify", "duality"],
        &["verify", "massbound", "--preset", "cubic-sensor"],
    ];
    for args in runs {
        let tmp = tempfile::tempdir().unwrap();
        let out = zakai(tmp.path(), args);
        assert_eq!(out.status.code(), Some(0), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        let m = manifest(tmp.path());
        for f in m["outputs"].as_array().unwrap() {
            let dir = std::fs::read_dir(tmp.path()).unwrap().next().unwrap().unwrap().path();
            assert!(dir.join(f.as_str().unwrap()).exists(), "{args:?} missing {f}");
        }
    }
}
