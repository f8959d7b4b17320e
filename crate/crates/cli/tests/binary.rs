use std::path::Path;
use std::process::{Command, Output};

fn bms(dir: &Path, args: &[&str], seed_env: Option<&str>) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_bms"));
    c.current_dir(dir).args(args).env_remove("BMS_SEED");
    if let Some(s) = seed_env {
        c.env("BMS_SEED", s);
    }
    c.output().unwrap()
}

fn write_config(dir: &Path) {
    let cfg = r#"{"task": "fork", "steps": 4, "batch": 4, "t_train": 2, "seed": 1,
        "data": {"n_train": 16, "n_test": 4}, "eval_every": 0, "checkpoint_every": 0,
        "eval": {"t_samples_cll": 10, "t_samples_oracle": 10}}"#;
    std::fs::write(dir.join("cfg.json"), cfg).unwrap();
}

fn manifest_seed(dir: &Path, out: &str) -> u64 {
    let text = std::fs::read_to_string(dir.join(out).join("manifest.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["seed"].as_u64().unwrap()
}

#[test]
fn seed_precedence_is_file_then_env_then_flag() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_config(d);
    assert!(
        bms(d, &["gen-data", "--config", "cfg.json", "--out", "a"], None)
            .status
            .success()
    );
    assert_eq!(manifest_seed(d, "a"), 1);
    assert!(bms(
        d,
        &["gen-data", "--config", "cfg.json", "--out", "b"],
        Some("7")
    )
    .status
    .success());
    assert_eq!(manifest_seed(d, "b"), 7);
    let o = bms(
        d,
        &[
            "gen-data", "--config", "cfg.json", "--out", "c", "--seed", "9",
        ],
        Some("7"),
    );
    assert!(o.status.success());
    assert_eq!(manifest_seed(d, "c"), 9);
    let o = bms(
        d,
        &["gen-data", "--config", "cfg.json", "--out", "e"],
        Some("x"),
    );
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn train_eval_sample_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_config(d);
    let o = bms(d, &["train", "--config", "cfg.json", "--out", "run"], None);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = bms(
        d,
        &["eval", "--checkpoint", "run/final.bms", "--out", "ev"],
        None,
    );
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("ncll"));
    let o = bms(
        d,
        &[
            "sample",
            "--checkpoint",
            "run/final.bms",
            "--index",
            "99",
            "--out",
            "s",
        ],
        None,
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("out of range"));
    let o = bms(
        d,
        &["eval", "--checkpoint", "missing.bms", "--out", "ev2"],
        None,
    );
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn gradcheck_exit_status_follows_the_suite() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(
        bms(d, &["gradcheck", "--out", "g"], None).status.code(),
        Some(0)
    );
    assert!(d.join("g/gradcheck.csv").exists());
    let o = bms(
        d,
        &["gradcheck", "--inject-fault", "tanh", "--out", "h"],
        None,
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("FAIL op tanh"));
}
