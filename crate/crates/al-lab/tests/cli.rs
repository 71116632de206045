//! End-to-end checks of the command-line interface: subcommands, config
//! overrides, and exit codes.

use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_al-lab"))
}

const FAST: &[&str] = &[
    "--set",
    "epochs=4",
    "--set",
    "data.per_class=12",
    "--set",
    "data.group_size=2",
    "--set",
    "acquisition.samples=3",
];

#[test]
fn run_writes_one_jsonl_record_per_epoch() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run.jsonl");
    let status = bin()
        .args(["run", "--seed", "7"])
        .args(FAST)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let text = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 4);
    for line in lines {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["seed"], 7);
        assert!(v["epoch"].is_u64());
        assert!(v["class_loss"].is_f64());
    }
}

#[test]
fn identical_invocations_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a.jsonl"), tmp.path().join("b.jsonl"));
    for out in [&a, &b] {
        assert!(bin().args(["run", "--seed", "3"]).args(FAST).arg("--out").arg(out).status().unwrap().success());
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn config_error_exits_with_code_one() {
    let status = bin().args(["run", "--set", "oracle.gamma=2.0"]).status().unwrap();
    assert_eq!(status.code(), Some(1));
    let status = bin().args(["run", "--set", "no.such=1"]).status().unwrap();
    assert_eq!(status.code(), Some(1));
    let status = bin().args(["run", "--config", "/nonexistent/x.toml"]).status().unwrap();
    assert_eq!(status.code(), Some(1));
}

#[test]
fn sweep_then_report_produces_summary_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("sweep");
    let status = bin()
        .args(["sweep", "--seeds", "1,2", "--strategies", "no-oracle,full-oracle", "--gammas", "0.0"])
        .args(FAST)
        .arg("--out")
        .arg(&dir)
        .status()
        .unwrap();
    assert!(status.success());

    let csv = tmp.path().join("summary.csv");
    let status = bin().arg("report").arg(&dir).arg("--out").arg(&csv).status().unwrap();
    assert!(status.success());
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("strategy,function,mode,noise,gamma,runs"));
    assert_eq!(text.lines().count(), 3, "header plus two strategy cells:\n{text}");
}

#[test]
fn out_dir_env_var_is_honoured() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("from-env");
    let status = bin()
        .args(["sweep", "--seeds", "1", "--strategies", "full-oracle"])
        .args(FAST)
        .env("AL_LAB_OUT_DIR", &dir)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(dir.is_dir());
}
