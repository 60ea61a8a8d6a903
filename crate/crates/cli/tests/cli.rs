use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use trajlab::io::{self, read_jsonl, write_jsonl, Header, TrajectoryRecord};
use trajlab::world::Scenario;

const TINY: &str = r#"
seed = 5

[policy.sft]
steps = 10
batch_size = 16

[grpo]
batch_size = 4

[adas]
rollouts = 8

[experiment]
train_size = 6
eval_size = 3
rl_pool_size = 8
rl_steps = 2
validation_k = 2
sft_variants = ["gt_only", "fte"]
rl_variants = ["random_sampling"]
"#;

fn trajlab(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_trajlab"))
        .current_dir(dir)
        .env("TRAJLAB_WORKERS", "1")
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> serde_json::Value {
    let o = trajlab(dir, args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&o.stdout).unwrap()
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.toml"), TINY).unwrap();
    ok(dir.path(), &["--config", "run.toml", "--out", "s", "gen"]);
    dir
}

#[test]
fn ground_truth_scores_100() {
    let dir = setup();
    let (_, scenarios): (_, Vec<Scenario>) = read_jsonl(&dir.path().join("s/eval.jsonl"), io::SCENARIOS).unwrap();
    let records: Vec<TrajectoryRecord> = scenarios
        .iter()
        .map(|s| TrajectoryRecord {
            scenario_id: s.id.clone(),
            trajectory: s.gt.clone(),
        })
        .collect();
    write_jsonl(&dir.path().join("gt.jsonl"), &Header::new(io::TRAJECTORIES, ""), &records).unwrap();
    let v = ok(
        dir.path(),
        &["--config", "run.toml", "--out", "sc", "score", "--trajectories", "gt.jsonl", "--scenarios", "s/eval.jsonl"],
    );
    assert_eq!(v["mean_pdms"].as_f64().unwrap(), 100.0);
    assert_eq!(v["records"], 3);
    let (h, _): (_, Vec<serde_json::Value>) = read_jsonl(&dir.path().join("sc/scores.jsonl"), io::SCORES).unwrap();
    assert_eq!(h.config_hash, v["config_hash"].as_str().unwrap());
}

#[test]
fn expand_without_expansion_keeps_one_record_per_scenario() {
    let dir = setup();
    let v = ok(
        dir.path(),
        &["--config", "run.toml", "--out", "d", "expand", "--scenarios", "s/train.jsonl", "--no-expand"],
    );
    assert_eq!(v["records"], 6);
    assert_eq!(v["scenarios"], 6);
    let v = ok(dir.path(), &["--config", "run.toml", "--out", "e", "expand", "--scenarios", "s/train.jsonl"]);
    assert!(v["records"].as_u64().unwrap() >= 6);
    assert!(dir.path().join("e/dataset.stats.jsonl").exists());
}

#[test]
fn pipeline_and_repeatable_diagnostics() {
    let dir = setup();
    let d = dir.path();
    ok(d, &["--config", "run.toml", "--out", "e", "expand", "--scenarios", "s/train.jsonl"]);
    ok(
        d,
        &["--config", "run.toml", "--out", "m", "sft", "--dataset", "e/dataset.jsonl", "--scenarios", "s/train.jsonl"],
    );
    let diag = |out: &str| {
        ok(
            d,
            &["--config", "run.toml", "--out", out, "diagnose", "--checkpoint", "m/sft.ckpt", "--scenarios", "s/eval.jsonl", "--k", "2"],
        );
        fs::read(d.join(out).join("diagnostics.jsonl")).unwrap()
    };
    assert_eq!(diag("a"), diag("b"));

    let v = ok(
        d,
        &[
            "--config", "run.toml", "--out", "r", "rl", "--checkpoint", "m/sft.ckpt", "--scenarios", "s/rl_pool.jsonl",
            "--eval", "s/eval.jsonl", "--variant", "random_sampling",
        ],
    );
    assert_eq!(v["steps"], 2);
    let (h, rows): (_, Vec<serde_json::Value>) = read_jsonl(&d.join("r/rl_log.jsonl"), io::TRAIN_LOG).unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(h.config_hash, v["config_hash"].as_str().unwrap());
}

#[test]
fn seed_flag_changes_outputs_reproducibly() {
    let dir = setup();
    let d = dir.path();
    let a = ok(d, &["--config", "run.toml", "--seed", "9", "--out", "x", "gen"]);
    let b = ok(d, &["--config", "run.toml", "--seed", "9", "--out", "y", "gen"]);
    assert_eq!(a, b);
    assert_eq!(fs::read(d.join("x/train.jsonl")).unwrap(), fs::read(d.join("y/train.jsonl")).unwrap());
    assert_ne!(fs::read(d.join("x/train.jsonl")).unwrap(), fs::read(d.join("s/train.jsonl")).unwrap());
}

#[test]
fn experiment_writes_tables_and_plots() {
    let dir = setup();
    let d = dir.path();
    let v = ok(d, &["--config", "run.toml", "--out", "x", "experiment"]);
    let hash = v["config_hash"].as_str().unwrap();
    let sft = fs::read_to_string(d.join("x/tables/sft.csv")).unwrap();
    assert_eq!(sft.lines().count(), 3);
    assert!(sft.lines().skip(1).all(|l| l.contains(hash)));
    assert!(d.join("x/plots/manifest.json").exists());
    assert!(d.join("x/tables/rl.csv").exists());
}

fn error_line(o: &Output) -> String {
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr).to_string();
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    err.trim_end().to_string()
}

#[test]
fn failures_are_single_machine_readable_lines() {
    let dir = setup();
    let d = dir.path();
    let e = error_line(&trajlab(d, &["--out", "z", "score", "--trajectories", "nope.jsonl", "--scenarios", "s/eval.jsonl"]));
    assert!(e.starts_with("error kind=io:"), "{e}");

    fs::write(d.join("bad.toml"), "[grpo]\nclip_eps = 0.3\n").unwrap();
    let e = error_line(&trajlab(d, &["--config", "bad.toml", "gen"]));
    assert!(e.starts_with("error kind=schema:"), "{e}");

    let e = error_line(&trajlab(d, &["--out", "z", "expand", "--scenarios", "run.toml"]));
    assert!(e.starts_with("error kind=schema:"), "{e}");

    let closed = fs::read_to_string(d.join("s/eval.jsonl")).unwrap().replace("\"open\":true", "\"open\":false");
    fs::write(d.join("closed.jsonl"), closed).unwrap();
    let e = error_line(&trajlab(d, &["--out", "z", "expand", "--scenarios", "closed.jsonl"]));
    assert!(e.starts_with("error kind=schema:") && e.contains("open centerline"), "{e}");

    let e = error_line(&trajlab(d, &["frobnicate"]));
    assert!(e.starts_with("error kind=usage:"), "{e}");

    // a near-deterministic policy leaves the ADAS active set empty
    let cold = TINY.replace("rollouts = 8", "rollouts = 8\ntemperature = 1e-9");
    fs::write(d.join("cold.toml"), cold).unwrap();
    ok(d, &["--config", "cold.toml", "--out", "e", "expand", "--scenarios", "s/train.jsonl", "--no-expand"]);
    ok(d, &["--config", "cold.toml", "--out", "m", "sft", "--dataset", "e/dataset.jsonl", "--scenarios", "s/train.jsonl"]);
    let e = error_line(&trajlab(
        d,
        &["--config", "cold.toml", "--out", "r", "rl", "--checkpoint", "m/sft.ckpt", "--scenarios", "s/rl_pool.jsonl"],
    ));
    assert!(e.starts_with("error kind=empty_active_set:"), "{e}");
}
