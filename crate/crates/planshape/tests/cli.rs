//! End-to-end checks of the `planshape` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use planshape::checkpoint::Checkpoint;
use planshape::manifest::{RunManifest, RunStatus};
use planshape::{metrics_csv, trajectory_log};
use planshape_core::trainer::Mode;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_planshape"));
    c.env_remove(planshape::cli::OUT_DIR_ENV);
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn small_world(dir: &Path) -> PathBuf {
    let w = dir.join("world.json");
    let o = run(&["gen-world", "--seed", "5", "--entities", "16", "--relations", "3", "--hops", "1-2", "--out", s(&w)]);
    assert!(o.status.success(), "{}", stderr(&o));
    w
}

fn small_config(dir: &Path) -> PathBuf {
    let c = dir.join("run.toml");
    std::fs::write(
        &c,
        "version = 1\nsteps = 3\nbatch_queries = 4\nrollouts_per_query = 4\ntrain_queries = 8\n\
         heldout_queries = 4\ncheckpoint_every = 2\nenable_eas = true\nenable_sau = true\n",
    )
    .unwrap();
    c
}

#[test]
fn gen_world_is_deterministic_and_reloadable() {
    let dir = tempfile::tempdir().unwrap();
    let a = small_world(dir.path());
    let b = dir.path().join("again.json");
    let o = run(&["gen-world", "--seed", "5", "--entities", "16", "--relations", "3", "--hops", "1-2", "--out", s(&b)]);
    assert!(o.status.success());
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let w = planshape::world_file::load(&a).unwrap();
    assert_eq!(w.n_entities(), 16);
}

#[test]
fn gen_world_rejects_invalid_sizes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("w.json");
    let o = run(&["gen-world", "--entities", "1", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("entities"), "{}", stderr(&o));
    assert!(!out.exists());
    let o = run(&["gen-world", "--hops", "0-9", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn usage_errors() {
    let o = run(&["train"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--world"));
    assert_eq!(run(&["bogus"]).status.code(), Some(1));
    assert_eq!(run(&["train", "--world", "w.json", "--mode", "fancy"]).status.code(), Some(1));
    assert_eq!(run(&["--version"]).status.code(), Some(0));
}

#[test]
fn missing_world_file_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["train", "--world", s(&dir.path().join("nope.json")), "--out-dir", s(&dir.path().join("r"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bad_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let w = small_world(dir.path());
    let c = dir.path().join("bad.toml");
    std::fs::write(&c, "version = 1\nrollouts_per_query = 1\n").unwrap();
    let o = run(&["train", "--world", s(&w), "--config", s(&c), "--out-dir", s(&dir.path().join("r"))]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn train_analyze_eval_replay() {
    let dir = tempfile::tempdir().unwrap();
    let w = small_world(dir.path());
    let c = small_config(dir.path());
    let run_dir = dir.path().join("run");
    let o = run(&["train", "--world", s(&w), "--config", s(&c), "--out-dir", s(&run_dir), "--mode", "vanilla", "--seed", "7"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("held-out accuracy"));

    // flags beat the config file
    let manifest_path = run_dir.join("manifest.json");
    let m = RunManifest::load(&manifest_path).unwrap();
    assert_eq!(m.mode, Mode::Vanilla);
    assert!(!m.config.enable_eas && !m.config.enable_sau);
    assert_eq!(m.config.seed, 7);
    assert_eq!(m.status, RunStatus::Completed);
    assert_eq!(m.world_sha256, planshape::world_file::file_sha256(&w).unwrap());

    let metrics = metrics_csv::read(&run_dir.join("metrics.csv")).unwrap();
    assert_eq!(metrics.len(), 3);
    assert_eq!(metrics.iter().map(|m| m.step).collect::<Vec<_>>(), [1, 2, 3]);
    for step in 1..=3 {
        let log = trajectory_log::read(&run_dir.join(format!("trajectories/step_{step:04}.jsonl"))).unwrap();
        assert_eq!(log.len(), 16);
    }
    let cks: Vec<_> = ["step_0002.json", "step_0003.json"].iter().map(|n| run_dir.join("checkpoints").join(n)).collect();
    assert!(cks.iter().all(|p| p.exists()));
    assert!(!run_dir.join("checkpoints/step_0001.json").exists());

    // a second run into the same directory is refused
    let again = run(&["train", "--world", s(&w), "--config", s(&c), "--out-dir", s(&run_dir)]);
    assert_eq!(again.status.code(), Some(1));

    let csv_out = dir.path().join("analyzed.csv");
    let o = run(&["analyze", s(&run_dir.join("trajectories")), "--manifest", s(&manifest_path), "--out", s(&csv_out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("stage entropy"));
    let analyzed = metrics_csv::read(&csv_out).unwrap();
    assert_eq!(analyzed.len(), 3);
    for (a, b) in analyzed.iter().zip(&metrics) {
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).abs() <= 1e-9);
        }
    }

    let heldout = run_dir.join("queries_heldout.json");
    let o = run(&["eval", "--checkpoint", s(&cks[1]), "--world", s(&w), "--queries", s(&heldout), "--greedy"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(report["episodes"], 4);
    let o = run(&["eval", "--checkpoint", s(&cks[1]), "--world", s(&w), "--queries", s(&heldout), "--samples", "3"]);
    assert!(o.status.success());
    let report: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(report["episodes"], 12);
    let o = run(&["eval", "--checkpoint", s(&dir.path().join("none.json")), "--world", s(&w), "--queries", s(&heldout)]);
    assert_eq!(o.status.code(), Some(2));

    let o = run(&["replay", "--manifest", s(&manifest_path), "--out-dir", s(&dir.path().join("replayed"))]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("metrics identical"));
}

#[test]
fn eval_rejects_mismatched_checkpoint_shape() {
    let dir = tempfile::tempdir().unwrap();
    let w = small_world(dir.path());
    let q = dir.path().join("q.json");
    let world = planshape::world_file::load(&w).unwrap();
    let qs = planshape_core::world::sample_queries(&world, 3, 0).unwrap();
    std::fs::write(&q, serde_json::to_string(&qs).unwrap()).unwrap();
    let mut ck = Checkpoint::new(0, &planshape_core::PolicyParams::zeros());
    ck.contexts -= 1;
    ck.logits.truncate(ck.contexts * ck.vocab);
    let ckp = dir.path().join("ck.json");
    std::fs::write(&ckp, serde_json::to_string(&ck).unwrap()).unwrap();
    let o = run(&["eval", "--checkpoint", s(&ckp), "--world", s(&w), "--queries", s(&q), "--greedy"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("shape"), "{}", stderr(&o));
}

#[test]
fn analyze_empty_and_corrupted_logs() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.jsonl");
    std::fs::write(&empty, "").unwrap();
    let o = run(&["analyze", s(&empty)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().filter(|l| l.starts_with('#')).count(), 3);

    let bad = dir.path().join("bad.jsonl");
    std::fs::write(&bad, "\n{\"query_id\": 3,\n").unwrap();
    let o = run(&["analyze", s(&bad)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 2"), "{}", stderr(&o));
}

#[test]
fn default_output_root_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let w = small_world(dir.path());
    let c = small_config(dir.path());
    let root = dir.path().join("root");
    let o = bin()
        .args(["train", "--world", s(&w), "--config", s(&c), "--mode", "eas", "--seed", "2", "--steps", "1"])
        .env(planshape::cli::OUT_DIR_ENV, &root)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let m = RunManifest::load(&root.join("eas-seed2/manifest.json")).unwrap();
    assert_eq!(m.config.steps, 1);
    assert_eq!(metrics_csv::read(&root.join("eas-seed2/metrics.csv")).unwrap().len(), 1);
}

#[test]
fn identical_commands_give_identical_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let w = small_world(dir.path());
    let c = small_config(dir.path());
    let mut outs = Vec::new();
    for name in ["a", "b"] {
        let d = dir.path().join(name);
        let o = run(&["train", "--world", s(&w), "--config", s(&c), "--out-dir", s(&d)]);
        assert!(o.status.success());
        outs.push(d);
    }
    for f in ["metrics.csv", "trajectories/step_0002.jsonl", "checkpoints/step_0003.json", "eval.json"] {
        assert_eq!(std::fs::read(outs[0].join(f)).unwrap(), std::fs::read(outs[1].join(f)).unwrap(), "{f}");
    }
}
