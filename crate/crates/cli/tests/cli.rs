use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const TINY: &str = "test_count = 5\n[task]\ncount = 10\n[priming]\nsteps = 20\n[train]\nsteps = 1\nwarmup_steps = 0\nbatch_prompts = 2\n[eval]\nsamples = 1\n";

fn p2s(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_p2s")).args(args).current_dir(dir).env_remove("P2S_OUT_DIR").output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn records(path: &Path) -> Vec<Value> {
    std::fs::read_to_string(path).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

fn kinds<'a>(recs: &'a [Value], kind: &str) -> Vec<&'a Value> {
    recs.iter().filter(|r| r["type"] == kind).collect()
}

#[test]
fn one_step_run_writes_one_step_record_and_resolved_config() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write(d.path(), "c.toml", TINY);
    let out = p2s(&["run", "--config", &cfg, "--out", "o", "--seed", "7", "--mode", "grpo"], d.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let recs = records(&d.path().join("o/grpo-s7/metrics.jsonl"));
    assert_eq!(kinds(&recs, "step").len(), 1);
    assert_eq!(recs[0]["type"], "run");
    assert_eq!(recs.last().unwrap()["type"], "summary");
    let summary: Value =
        serde_json::from_str(&std::fs::read_to_string(d.path().join("o/grpo-s7/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["seed"], 7);
    assert_eq!(summary["config"]["train"]["seed"], 7);
    assert_eq!(summary["config"]["mode"], "grpo");
    assert_eq!(summary["status"], "ok");
    assert!(d.path().join("o/grpo-s7/checkpoint.json").exists());
    let stdout: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(stdout["run_id"], "grpo-s7");
}

#[test]
fn invalid_group_size_is_a_config_error_naming_the_field() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write(d.path(), "c.toml", "[train]\ngroup_size = 0\n");
    let out = p2s(&["run", "--config", &cfg, "--out", "o"], d.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("train.group_size"));
    assert!(!d.path().join("o").exists());
}

#[test]
fn validate_lists_every_violation() {
    let d = tempfile::tempdir().unwrap();
    let ok = write(d.path(), "ok.toml", TINY);
    let out = p2s(&["validate", "--config", &ok], d.path());
    assert!(out.status.success());

    let bad = write(d.path(), "bad.toml", "[train]\nclip_epsilon = 1.5\n[pfr]\nsuccess_threshold = 0.0\n");
    let out = p2s(&["validate", "--config", &bad], d.path());
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("clip epsilon outside (0,1)"), "{err}");
    assert!(err.contains("success threshold outside (0,1]"), "{err}");

    let out = p2s(&["validate", "--config", "missing.toml"], d.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("I/O error"));

    let out = p2s(&["validate", "--config", &ok, "--ablate", "xyz"], d.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn numerical_blowup_aborts_with_partial_artifacts() {
    let d = tempfile::tempdir().unwrap();
    let text = TINY.replace("steps = 1\n", "steps = 5\nlearning_rate = 1e300\noptimizer = \"sgd\"\n");
    let cfg = write(d.path(), "c.toml", &text);
    let out = p2s(&["run", "--config", &cfg, "--out", "o", "--mode", "grpo"], d.path());
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    let recs = records(&d.path().join("o/grpo-s42/metrics.jsonl"));
    assert_eq!(kinds(&recs, "error").len(), 1);
    let summary = kinds(&recs, "summary")[0];
    assert_eq!(summary["status"], "aborted");
    assert!(d.path().join("o/grpo-s42/checkpoint.json").exists());
}

#[test]
fn compare_then_export_produces_the_full_matrix() {
    let d = tempfile::tempdir().unwrap();
    let text = format!("{TINY}[compare]\nseeds = [1, 2]\nablations = []\n").replace("steps = 1\n", "steps = 3\n");
    let cfg = write(d.path(), "c.toml", &text);
    let out = Command::new(env!("CARGO_BIN_EXE_p2s"))
        .args(["compare", "--config", &cfg])
        .current_dir(d.path())
        .env("P2S_OUT_DIR", "cmp")
        .env("P2S_WORKERS", "2")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let root = d.path().join("cmp");
    let streams: Vec<_> = ["grpo", "rlpr", "p2s"]
        .iter()
        .flat_map(|m| [1, 2].map(|s| root.join(format!("{m}-s{s}/metrics.jsonl"))))
        .collect();
    assert!(streams.iter().all(|p| p.exists()));
    let csv = std::fs::read_to_string(root.join("comparison.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 6);
    let md = std::fs::read_to_string(root.join("comparison.md")).unwrap();
    assert!(md.contains("| p2s | 2 |"), "{md}");

    let out = p2s(&["export", "cmp", "--out", "curves"], d.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for name in ["reward", "completion_length", "pfr", "success_rate"] {
        let text = std::fs::read_to_string(d.path().join(format!("curves/{name}.csv"))).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("run_id,method,seed,step,value"));
        assert_eq!(lines.count(), 3 * 3 * 2);
    }
}

#[test]
fn export_cites_the_malformed_line() {
    let d = tempfile::tempdir().unwrap();
    write(d.path(), "m.jsonl", "{\"type\":\"run\",\"run_id\":\"x\",\"method\":\"grpo\",\"seed\":0,\"ablations\":[]}\nnot json\n");
    let out = p2s(&["export", "m.jsonl", "--out", "c"], d.path());
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("m.jsonl:2"));
}
