use std::cell::Cell;
use std::path::{Path, PathBuf};

use planshape::config::RunConfig;
use planshape::manifest::{RunManifest, RunStatus};
use planshape::run::{self, RayonCollector};
use planshape::{checkpoint, exit, world_file, Error};
use planshape_core::policy::{Decoding, Limits, PolicyError};
use planshape_core::trainer::{
    initial_params, train_with, CollectSettings, Collector, RolloutJob, SerialCollector, TrainConfig, TrainError,
};
use planshape_core::world::{generate_world, sample_queries, DEFAULT_TOP_K};
use planshape_core::{KnowledgeWorld, PolicyParams, Rollout};

fn world_file_in(dir: &Path) -> PathBuf {
    let p = dir.join("world.json");
    world_file::save(&generate_world(8, 18, 3, 1..=2).unwrap(), &p).unwrap();
    p
}

fn tiny() -> RunConfig {
    RunConfig {
        steps: 3,
        batch_queries: 4,
        rollouts_per_query: 4,
        train_queries: 8,
        heldout_queries: 4,
        checkpoint_every: 1,
        ..RunConfig::default()
    }
}

#[test]
fn rayon_collector_matches_serial_in_any_pool() {
    let w = generate_world(8, 18, 3, 1..=2).unwrap();
    let qs = sample_queries(&w, 6, 1).unwrap();
    let params = PolicyParams::init(3, 1.0).unwrap();
    let jobs: Vec<RolloutJob<'_>> =
        qs.iter().flat_map(|q| (0..5).map(move |i| RolloutJob { query: q, seed: 100 + i })).collect();
    let settings = CollectSettings { limits: Limits::default(), top_k: DEFAULT_TOP_K, decoding: Decoding::Sample };
    let serial = SerialCollector.collect(&params, &w, &jobs, &settings).unwrap();
    for threads in [1, 3, 8] {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let par = pool.install(|| RayonCollector.collect(&params, &w, &jobs, &settings).unwrap());
        assert_eq!(par, serial, "{threads} threads");
    }
}

#[test]
fn parallel_training_equals_serial_training() {
    let w = generate_world(8, 18, 3, 1..=2).unwrap();
    let qs = sample_queries(&w, 8, 1).unwrap();
    let cfg = TrainConfig { steps: 3, batch_queries: 4, rollouts_per_query: 4, ..TrainConfig::default() };
    let a = train_with(&cfg, &w, &qs, initial_params(&cfg).unwrap(), &SerialCollector, &mut ()).unwrap();
    let b = train_with(&cfg, &w, &qs, initial_params(&cfg).unwrap(), &RayonCollector, &mut ()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn run_outputs_match_in_memory_results() {
    let dir = tempfile::tempdir().unwrap();
    let wp = world_file_in(dir.path());
    let out = dir.path().join("r");
    let s = run::run(&tiny(), &wp, &out, false).unwrap();
    assert_eq!(planshape::metrics_csv::read(&out.join("metrics.csv")).unwrap(), s.metrics);
    let (step, last) = checkpoint::load(&out.join("checkpoints/step_0003.json")).unwrap();
    assert_eq!(step, 3);
    assert_eq!(last, s.params);
    let eval: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("eval.json")).unwrap()).unwrap();
    assert_eq!(eval["heldout_sampled"]["episodes"], 16);
    assert_eq!(eval["heldout_greedy"]["episodes"], 4);
    assert_eq!(s.manifest, RunManifest::load(&out.join("manifest.json")).unwrap());
}

#[test]
fn overwrite_replaces_only_run_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let wp = world_file_in(dir.path());
    let out = dir.path().join("r");
    run::run(&tiny(), &wp, &out, false).unwrap();
    std::fs::write(out.join("notes.txt"), "keep").unwrap();
    assert!(matches!(run::run(&tiny(), &wp, &out, false), Err(Error::Usage(_))));
    let s = run::run(&RunConfig { steps: 2, ..tiny() }, &wp, &out, true).unwrap();
    assert_eq!(s.metrics.len(), 2);
    assert!(!out.join("trajectories/step_0003.jsonl").exists());
    assert_eq!(std::fs::read_to_string(out.join("notes.txt")).unwrap(), "keep");
}

#[test]
fn replay_refuses_a_modified_world() {
    let dir = tempfile::tempdir().unwrap();
    let wp = world_file_in(dir.path());
    let out = dir.path().join("r");
    run::run(&tiny(), &wp, &out, false).unwrap();
    let mut text = std::fs::read_to_string(&wp).unwrap();
    text.push(' ');
    std::fs::write(&wp, text).unwrap();
    let e = run::replay(&out.join("manifest.json"), &dir.path().join("r2"), false).unwrap_err();
    assert_eq!(e.exit_code(), exit::DATA);
    assert!(e.to_string().contains("hash"));
}

/// Poisons every stored log-probability from the second collection on.
struct Corrupting {
    calls: Cell<usize>,
}

impl Collector for Corrupting {
    fn collect(
        &self,
        params: &PolicyParams,
        world: &KnowledgeWorld,
        jobs: &[RolloutJob<'_>],
        settings: &CollectSettings,
    ) -> Result<Vec<Rollout>, PolicyError> {
        let mut out = SerialCollector.collect(params, world, jobs, settings)?;
        self.calls.set(self.calls.get() + 1);
        if self.calls.get() >= 2 {
            for r in &mut out {
                r.per_token.logprob[0] = -1e308;
            }
        }
        Ok(out)
    }
}

#[test]
fn numerical_abort_keeps_last_good_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let wp = world_file_in(dir.path());
    let out = dir.path().join("r");
    let cfg = RunConfig { checkpoint_every: 10, ..tiny() };
    let e = run::run_with(&cfg, &wp, &out, false, &Corrupting { calls: Cell::new(0) }).unwrap_err();
    assert!(matches!(e, Error::Train(TrainError::NumericalAbort { step: 2, .. })), "{e}");
    assert_eq!(e.exit_code(), exit::NUMERICAL);

    let one = run::run(&RunConfig { steps: 1, ..cfg.clone() }, &wp, &dir.path().join("one"), false).unwrap();
    let (step, good) = checkpoint::load(&out.join("checkpoints/last_good.json")).unwrap();
    assert_eq!(step, 1);
    assert_eq!(good, one.params);
    let m = RunManifest::load(&out.join("manifest.json")).unwrap();
    assert_eq!(m.status, RunStatus::Aborted);
    assert!(m.message.unwrap().contains("step 2"));
    assert_eq!(planshape::metrics_csv::read(&out.join("metrics.csv")).unwrap().len(), 1);
}
