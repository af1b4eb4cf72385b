use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use gradflow::experiment::ExperimentConfig;

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn gradflow(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_gradflow"))
        .args(args)
        .output()
        .expect("binary runs")
}

/// The bundled double-well config, shrunk to run in seconds.
fn small_dw1d(dir: &Path) -> PathBuf {
    let text = fs::read_to_string(configs_dir().join("dw1d.toml")).unwrap();
    let text = text
        .replace("n_particles = 2000", "n_particles = 200")
        .replace("epochs = 5000", "epochs = 40\nlog_every = 10");
    let p = dir.join("small.toml");
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn bundled_configs_are_valid() {
    let mut n = 0;
    for entry in fs::read_dir(configs_dir()).unwrap() {
        let p = entry.unwrap().path();
        if p.extension().and_then(|e| e.to_str()) != Some("toml") {
            continue;
        }
        let c = ExperimentConfig::load(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        c.validate().unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        let again = ExperimentConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(c, again);
        n += 1;
    }
    assert!(n >= 5);
}

#[test]
fn run_produces_artifacts_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_dw1d(tmp.path());
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for out in [&a, &b] {
        let o = gradflow(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", "7"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["meta.json", "metrics.json", "checkpoints/final.json", "checkpoints/epoch_00010.json", "train_log.csv", "loss_log.csv", "grid_export.csv", "dataset/meta.json"] {
        assert!(a.join(f).exists(), "{f}");
    }
    assert_eq!(fs::read(a.join("metrics.json")).unwrap(), fs::read(b.join("metrics.json")).unwrap());
    let metrics: serde_json::Value = serde_json::from_slice(&fs::read(a.join("metrics.json")).unwrap()).unwrap();
    assert!(metrics["grad_error"].as_f64().unwrap() >= 0.0);
    let meta: serde_json::Value = serde_json::from_slice(&fs::read(a.join("meta.json")).unwrap()).unwrap();
    assert_eq!(meta["seeds"]["master"], 7);

    let o = gradflow(&["compare", a.to_str().unwrap(), b.to_str().unwrap()]);
    assert!(o.status.success());
    let table = String::from_utf8(o.stdout).unwrap();
    let rows: Vec<&str> = table.lines().collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[0].starts_with("run,alpha,q,sigma"));
    assert_eq!(rows[1].split_once(',').unwrap().1, rows[2].split_once(',').unwrap().1);
}

#[test]
fn stages_can_run_separately() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_dw1d(tmp.path());
    let out = tmp.path().join("run");
    let out_s = out.to_str().unwrap();
    let c = cfg.to_str().unwrap();
    assert!(gradflow(&["simulate", "--config", c, "--out", out_s]).status.success());
    assert!(out.join("dataset/q000_s000.csv").exists());
    // later stages read the config back from meta.json
    assert!(gradflow(&["train", "--out", out_s, "--threads", "1"]).status.success());
    let o = gradflow(&["evaluate", "--out", out_s]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("grad_error"));

    let whole = tmp.path().join("whole");
    assert!(gradflow(&["run", "--config", c, "--out", whole.to_str().unwrap()]).status.success());
    assert_eq!(fs::read(out.join("metrics.json")).unwrap(), fs::read(whole.join("metrics.json")).unwrap());
}

#[test]
fn errors_are_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(configs_dir().join("dw1d.toml")).unwrap().replace("alpha = 0.5", "alpha = 1.5");
    let p = tmp.path().join("bad.toml");
    fs::write(&p, text).unwrap();
    let o = gradflow(&["run", "--config", p.to_str().unwrap(), "--out", tmp.path().join("x").to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("loss.alpha"));

    let o = gradflow(&["compare"]);
    assert!(!o.status.success());
    let o = gradflow(&["compare", tmp.path().to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("metrics.json"));
    let o = gradflow(&["train", "--out", tmp.path().join("nothing").to_str().unwrap()]);
    assert!(!o.status.success());
}
