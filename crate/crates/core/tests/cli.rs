//! End-to-end checks of the `sdrlab` binary: exit codes, artifact layout
//! and cross-process determinism.

use std::path::Path;
use std::process::{Command, Output};

const TINY_NET: &str = r#"{
    "subnets": [1, 2],
    "hosts": [
        {"address": [0, 0], "services": ["ssh"], "os": "linux", "processes": ["cron"]},
        {"address": [1, 0], "services": ["http", "ssh"], "os": "linux"},
        {"address": [1, 1], "services": ["http", "smb-share"], "os": "windows"}
    ],
    "firewalls": [],
    "adjacency": [[0, 1]],
    "service_catalog": {"ssh": "common", "http": "common", "smb-share": "data"}
}"#;

fn sdrlab(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_sdrlab"));
    cmd.args(args);
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

/// Writes a tiny-network run config into `dir` and returns its path.
fn write_config(dir: &Path, seed: u64) -> std::path::PathBuf {
    let net_path = dir.join("net.json");
    std::fs::write(&net_path, TINY_NET).unwrap();
    let cfg = serde_json::json!({
        "network": net_path,
        "algorithm": "a2c",
        "target": [1, 1],
        "initial": [0, 0],
        "seed": seed,
        "algo": {"episodes": 15},
        "warmup": {"episodes": 5},
    });
    let cfg_path = dir.join("run.json");
    std::fs::write(&cfg_path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    cfg_path
}

#[test]
fn help_and_version_exit_zero() {
    let help = sdrlab(&["--help"], &[]);
    assert_eq!(code(&help), 0);
    let text = String::from_utf8_lossy(&help.stdout);
    assert!(text.contains("train"), "{text}");
    assert!(text.contains("sweep"), "{text}");
    assert_eq!(code(&sdrlab(&["--version"], &[])), 0);
}

#[test]
fn usage_problems_exit_two() {
    assert_eq!(code(&sdrlab(&[], &[])), 2);
    assert_eq!(code(&sdrlab(&["frobnicate"], &[])), 2);
    assert_eq!(code(&sdrlab(&["train"], &[])), 2);
    assert_eq!(
        code(&sdrlab(&["train", "--config", "/no/such/file.json", "--quiet"], &[])),
        2
    );
}

#[test]
fn malformed_config_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("broken.json");
    std::fs::write(&path, "{\"algorithm\": \"warp-drive\"}").unwrap();
    let out = sdrlab(&["train", "--config", path.to_str().unwrap(), "--quiet"], &[]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}

#[test]
fn evaluate_without_checkpoint_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), 0);
    let out_dir = dir.path().join("empty");
    let out = sdrlab(
        &[
            "evaluate",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
            "--quiet",
        ],
        &[],
    );
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("checkpoint"));
}

#[test]
fn train_evaluate_export_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), 0);
    let cfg = cfg.to_str().unwrap();
    let out_dir = dir.path().join("run");
    let out_str = out_dir.to_str().unwrap();

    let train = sdrlab(&["train", "--config", cfg, "--out", out_str, "--quiet"], &[]);
    assert_eq!(code(&train), 0, "{}", String::from_utf8_lossy(&train.stderr));
    for name in ["checkpoint.json", "goal_set.json", "metrics.csv", "run_config.json"] {
        assert!(out_dir.join(name).exists(), "missing {name}");
    }
    let metrics = std::fs::read_to_string(out_dir.join("metrics.csv")).unwrap();
    let mut lines = metrics.lines();
    assert_eq!(lines.next(), Some("episode,reward,steps,wall_ms"));
    assert_eq!(lines.count(), 15);
    // Wall time stays zeroed unless explicitly requested.
    for line in metrics.lines().skip(1) {
        assert!(line.ends_with(",0"), "{line}");
    }

    let eval = sdrlab(&["evaluate", "--config", cfg, "--out", out_str, "--quiet"], &[]);
    assert_eq!(code(&eval), 0, "{}", String::from_utf8_lossy(&eval.stderr));
    let evaluation: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("evaluation.json")).unwrap())
            .unwrap();
    assert_eq!(evaluation["target"], serde_json::json!([1, 1]));
    let trace = std::fs::read_to_string(out_dir.join("trace.jsonl")).unwrap();
    assert!(!trace.trim().is_empty());
    for line in trace.trim().lines() {
        let record: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(record["action"]["kind"].is_string());
    }

    let export = sdrlab(&["export", "--config", cfg, "--out", out_str, "--quiet"], &[]);
    assert_eq!(code(&export), 0, "{}", String::from_utf8_lossy(&export.stderr));
    let dot = std::fs::read_to_string(out_dir.join("route.dot")).unwrap();
    assert!(dot.starts_with("digraph"));
    assert!(dot.contains("subgraph cluster_1"));
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), 0);
    let cfg = cfg.to_str().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let run = sdrlab(
            &["train", "--config", cfg, "--out", out.to_str().unwrap(), "--quiet"],
            &[],
        );
        assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    }
    for name in ["checkpoint.json", "goal_set.json", "metrics.csv"] {
        let bytes_a = std::fs::read(a.join(name)).unwrap();
        let bytes_b = std::fs::read(b.join(name)).unwrap();
        assert_eq!(bytes_a, bytes_b, "{name} differs between reruns");
    }
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), 0);
    let out_dir = dir.path().join("seeded");
    let run = sdrlab(
        &[
            "train",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
            "--seed",
            "7",
            "--quiet",
        ],
        &[],
    );
    assert_eq!(code(&run), 0);
    let echoed: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("run_config.json")).unwrap())
            .unwrap();
    assert_eq!(echoed["seed"], serde_json::json!(7));
}

#[test]
fn out_dir_falls_back_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), 0);
    let env_out = dir.path().join("from_env");
    let run = sdrlab(
        &["train", "--config", cfg.to_str().unwrap(), "--quiet"],
        &[("SDRLAB_OUT", env_out.to_str().unwrap())],
    );
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    assert!(env_out.join("checkpoint.json").exists());
}
