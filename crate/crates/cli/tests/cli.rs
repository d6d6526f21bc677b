use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn abd(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_abd"))
        .args(args)
        .current_dir(cwd)
        .env("ABD_DETERMINISTIC", "1")
        .output()
        .unwrap()
}

fn asset(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/assets/morphologies").join(name)
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn dyncheck_on_shipped_morphology_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let tree = asset("double_pendulum.json");
    let o = abd(&["dyncheck", "--tree", tree.to_str().unwrap(), "--out", "dc"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("PASS"));
    assert!(dir.path().join("dc/manifest.json").exists());
    assert!(dir.path().join("dc/dyncheck.json").exists());
}

#[test]
fn usage_errors_exit_64() {
    let dir = tempfile::tempdir().unwrap();
    let tree = asset("chain4.json");
    let t = tree.to_str().unwrap();
    assert_eq!(abd(&["dyncheck", "--tree", t, "--n-random", "0"], dir.path()).status.code(), Some(64));
    assert_eq!(abd(&["flops", "--tree", t, "--actor", "transformer"], dir.path()).status.code(), Some(64));
    assert_eq!(abd(&["no-such-command"], dir.path()).status.code(), Some(64));
    assert_eq!(abd(&["--help"], dir.path()).status.code(), Some(0));
}

#[test]
fn bad_morphology_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let mut doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(asset("chain4.json")).unwrap()).unwrap();
    doc["links"][1]["mass"] = serde_json::json!(-1.0);
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, doc.to_string()).unwrap();
    let o = abd(&["dyncheck", "--tree", bad.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    let missing = abd(&["dyncheck", "--tree", "nowhere.json"], dir.path());
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn train_then_shift_reports_full_retention_at_unit_factor() {
    let dir = tempfile::tempdir().unwrap();
    let o = abd(
        &[
            "train-policy", "--env", "double_pendulum_balance", "--total-env-steps", "2048", "--n-envs", "4",
            "--eval-interval", "2", "--eval-episodes", "3", "--out", "tp",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let ckpt = dir.path().join("tp/final.bin");
    assert!(ckpt.exists());
    let bytes = std::fs::read(&ckpt).unwrap();
    assert_eq!(&bytes[..8], b"ABDCKPT1");
    for f in ["metrics.csv", "eval.csv", "summary.json", "manifest.json"] {
        assert!(dir.path().join("tp").join(f).exists(), "{f}");
    }
    let o = abd(
        &["eval-shift", "--ckpt", ckpt.to_str().unwrap(), "--factors", "1.0", "--episodes", "10", "--out", "es"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("retention 100.0%"), "{}", stdout(&o));
}

#[test]
fn identity_dynamics_regression_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let o = abd(
        &["train-dynamics", "--env", "identity_synthetic", "--model", "mlp", "--epochs", "20", "--out", "td"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("td/summary.json")).unwrap()).unwrap();
    let mse = summary["val_mse"].as_f64().unwrap();
    assert!(mse < 1e-4, "val mse {mse}");
}
