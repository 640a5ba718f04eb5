use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn frtts(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_frtts"))
        .args(args)
        .env_remove("FRTTS_REWARD_ENDPOINT")
        .output()
        .unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("run.toml");
    fs::write(&path, text).unwrap();
    path.display().to_string()
}

#[test]
fn validate_config_accepts_defaults() {
    let out = frtts(&["validate-config"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok "));
}

#[test]
fn validate_config_rejects_misaligned_block_size() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "block_size = 5\n");
    let out = frtts(&["validate-config", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.starts_with("frtts: "), "{stderr}");
    assert_eq!(stderr.trim_end().lines().count(), 1);
}

#[test]
fn validate_config_rejects_unknown_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "num_sample = 8\n");
    let out = frtts(&["validate-config", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("num_sample"));
}

#[test]
fn run_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "prompt_count = 4\n");
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = frtts(&["run", "--config", &cfg, "--seed", "7", "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for name in ["run.json", "run.rewards.csv", "run.trials.csv"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
    let report: Value = serde_json::from_slice(&fs::read(a.join("run.json")).unwrap()).unwrap();
    assert_eq!(report["config"]["master_seed"], 7);
    assert_eq!(report["runs"].as_array().unwrap().len(), 4);
    let s = &report["summary"];
    assert_eq!(s["oracle_calls"], s["expected_oracle_calls"]);
    assert!(a.join("run.env.json").exists());
}

#[test]
fn bon_uses_n_calls_per_prompt() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let o = frtts(&["bon", "--prompts", "3", "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    let report: Value = serde_json::from_slice(&fs::read(out.join("bon.json")).unwrap()).unwrap();
    assert_eq!(report["summary"]["oracle_calls"], 24);
}

#[test]
fn ablate_filling_times_is_nondecreasing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let o = frtts(&["ablate", "--axis", "filling-times", "--values", "1,5,10", "--prompts", "10", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table: Value = serde_json::from_slice(&fs::read(out.join("ablate-filling-times.json")).unwrap()).unwrap();
    let best: Vec<f64> = table["rows"].as_array().unwrap().iter().map(|r| r["best_reward"].as_f64().unwrap()).collect();
    assert_eq!(best.len(), 3);
    assert!(best.windows(2).all(|w| w[0] <= w[1]), "{best:?}");
    let csv = fs::read_to_string(out.join("ablate-filling-times.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn ablate_rejects_unknown_axis() {
    let out = frtts(&["ablate", "--axis", "colour", "--values", "1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn correlate_writes_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "correlate_prompts = 6\ncorrelate_per_prompt = 2\n");
    let out = dir.path().join("o");
    let o = frtts(&["correlate", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("correlation.csv")).unwrap();
    assert!(csv.starts_with("config_hash,strategy,checkpoint,frontier,rho,n,note"));
    assert_eq!(csv.lines().count(), 1 + 6 * 3);
}

#[test]
fn unreachable_remote_oracle_exits_with_transport_code() {
    let dir = tempfile::tempdir().unwrap();
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let cfg = write_config(
        dir.path(),
        &format!("oracle = \"remote\"\nendpoint = \"http://127.0.0.1:{port}\"\nremote_retries = 0\nprompt_count = 1\n"),
    );
    let out = frtts(&["bon", "--config", &cfg, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
}
