//! Experiment runner: parallel rollout collection, on-disk logging and
//! checkpointing, and replay from a manifest.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use planshape_core::policy::PolicyError;
use planshape_core::trainer::{
    evaluate_with, initial_params, run_job, train_with, CollectSettings, Collector, EvalConfig, EvalReport,
    Observer, RolloutJob, StepRecord, TrainError,
};
use planshape_core::world::split_queries;
use planshape_core::{KnowledgeWorld, PolicyParams, Query, Rollout, StepMetrics};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::manifest::{Outputs, RunManifest, RunStatus, FILE_NAME};
use crate::{checkpoint, metrics_csv, trajectory_log, world_file, Error};

/// Fans rollout jobs out over the rayon pool. Every job owns its seed, so
/// the result does not depend on the number of threads.
#[derive(Debug, Clone, Copy, Default)]
pub struct RayonCollector;

impl Collector for RayonCollector {
    fn collect(
        &self,
        params: &PolicyParams,
        world: &KnowledgeWorld,
        jobs: &[RolloutJob<'_>],
        settings: &CollectSettings,
    ) -> Result<Vec<Rollout>, PolicyError> {
        jobs.par_iter().map(|j| run_job(params, world, j, settings)).collect()
    }
}

pub fn step_log_name(step: usize) -> String {
    format!("step_{step:04}.jsonl")
}

pub fn checkpoint_name(step: usize) -> String {
    format!("step_{step:04}.json")
}

/// Writes each step's rollouts, its metrics row and periodic checkpoints.
pub struct FileObserver {
    trajectories: PathBuf,
    checkpoints: PathBuf,
    metrics: BufWriter<File>,
    metrics_path: PathBuf,
    every: usize,
    last_step: usize,
}

impl FileObserver {
    pub fn create(run_dir: &Path, outputs: &Outputs, checkpoint_every: usize, steps: usize) -> Result<Self, Error> {
        let trajectories = run_dir.join(&outputs.trajectories);
        let checkpoints = run_dir.join(&outputs.checkpoints);
        for d in [&trajectories, &checkpoints] {
            std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
        }
        let metrics_path = run_dir.join(&outputs.metrics);
        let file = File::create(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?;
        let mut metrics = BufWriter::new(file);
        metrics.write_all(metrics_csv::header().as_bytes()).map_err(|e| Error::io(&metrics_path, e))?;
        metrics.flush().map_err(|e| Error::io(&metrics_path, e))?;
        Ok(Self { trajectories, checkpoints, metrics, metrics_path, every: checkpoint_every.max(1), last_step: steps })
    }

    fn write_step(&mut self, r: &StepRecord<'_>) -> Result<(), Error> {
        let rollouts: Vec<&Rollout> = r.groups.iter().flat_map(|g| &g.rollouts).collect();
        let path = self.trajectories.join(step_log_name(r.step));
        crate::write_file(&path, trajectory_log::to_jsonl(rollouts).as_bytes())?;
        let io = |e| Error::io(&self.metrics_path, e);
        self.metrics.write_all(metrics_csv::row(r.metrics).as_bytes()).map_err(io)?;
        self.metrics.flush().map_err(|e| Error::io(&self.metrics_path, e))?;
        if r.step % self.every == 0 || r.step == self.last_step {
            checkpoint::save(&self.checkpoints.join(checkpoint_name(r.step)), r.step, r.params)?;
        }
        Ok(())
    }
}

impl Observer for FileObserver {
    fn on_step(&mut self, record: &StepRecord<'_>) -> Result<(), String> {
        self.write_step(record).map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub heldout_sampled: EvalReport,
    pub heldout_greedy: EvalReport,
    pub samples_per_query: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub run_dir: PathBuf,
    pub manifest: RunManifest,
    pub metrics: Vec<StepMetrics>,
    pub params: PolicyParams,
    /// `None` when the run has no held-out queries.
    pub eval: Option<EvalSummary>,
}

/// Files a run writes directly under its directory.
fn run_entries(o: &Outputs) -> [&Path; 7] {
    [
        Path::new(FILE_NAME),
        &o.metrics,
        &o.trajectories,
        &o.checkpoints,
        &o.train_queries,
        &o.heldout_queries,
        &o.eval,
    ]
}

/// Makes `dir` ready for a run. A directory that already holds run outputs
/// is refused unless `overwrite`, in which case only those outputs are
/// removed.
pub fn prepare_run_dir(dir: &Path, outputs: &Outputs, overwrite: bool) -> Result<(), Error> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for entry in run_entries(outputs) {
        let p = dir.join(entry);
        if !p.exists() {
            continue;
        }
        if !overwrite {
            return Err(Error::Usage(format!("{} already holds a run (pass --overwrite to replace it)", dir.display())));
        }
        let res = if p.is_dir() { std::fs::remove_dir_all(&p) } else { std::fs::remove_file(&p) };
        res.map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Error> {
    let mut text = serde_json::to_string_pretty(value).expect("value serializes");
    text.push('\n');
    crate::write_file(path, text.as_bytes())
}

pub fn load_queries(path: &Path) -> Result<Vec<Query>, Error> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::data(path, format!("not a query list: {e}")))
}

/// Trains with `config` on the world stored at `world_path`, writing every
/// output under `run_dir`.
pub fn run(config: &RunConfig, world_path: &Path, run_dir: &Path, overwrite: bool) -> Result<RunSummary, Error> {
    run_with(config, world_path, run_dir, overwrite, &RayonCollector)
}

/// [`run`] with a caller-chosen collector for the training rollouts.
/// On a numerical abort the last good parameters are kept as
/// `checkpoints/last_good.json`.
pub fn run_with(
    config: &RunConfig,
    world_path: &Path,
    run_dir: &Path,
    overwrite: bool,
    collector: &impl Collector,
) -> Result<RunSummary, Error> {
    config.validate()?;
    let world_bytes = std::fs::read(world_path).map_err(|e| Error::io(world_path, e))?;
    let world_sha256 = world_file::sha256_hex(&world_bytes);
    let world: KnowledgeWorld = serde_json::from_slice(&world_bytes)
        .map_err(|e| Error::data(world_path, format!("not a world file: {e}")))?;
    let (train_q, heldout_q) = split_queries(&world, config.train_queries, config.heldout_queries, config.query_seed)?;

    let world_abs = std::fs::canonicalize(world_path).map_err(|e| Error::io(world_path, e))?;
    let mut manifest = RunManifest::new(config.clone(), world_abs, world_sha256);
    prepare_run_dir(run_dir, &manifest.outputs, overwrite)?;
    write_json(&run_dir.join(&manifest.outputs.train_queries), &train_q)?;
    write_json(&run_dir.join(&manifest.outputs.heldout_queries), &heldout_q)?;
    manifest.save(run_dir)?;

    let cfg = config.train_config();
    let mut observer = FileObserver::create(run_dir, &manifest.outputs, config.checkpoint_every, cfg.steps)?;
    let outcome = match train_with(&cfg, &world, &train_q, initial_params(&cfg)?, collector, &mut observer) {
        Ok(o) => o,
        Err(e) => {
            if let TrainError::NumericalAbort { step, last_good, .. } = &e {
                let path = run_dir.join(&manifest.outputs.checkpoints).join("last_good.json");
                checkpoint::save(&path, step - 1, last_good)?;
            }
            manifest.finish(RunStatus::Aborted, Some(e.to_string()));
            manifest.save(run_dir)?;
            return Err(e.into());
        }
    };

    let eval = if heldout_q.is_empty() {
        None
    } else {
        let sampled = EvalConfig {
            limits: cfg.limits,
            top_k: cfg.top_k,
            judge: cfg.judge,
            ..EvalConfig::sampled(config.eval_samples.max(1), config.seed)
        };
        let greedy = EvalConfig { decoding: planshape_core::policy::Decoding::Greedy, samples_per_query: 1, ..sampled };
        let summary = EvalSummary {
            heldout_sampled: evaluate_with(&outcome.params, &world, &heldout_q, &sampled, &RayonCollector)?,
            heldout_greedy: evaluate_with(&outcome.params, &world, &heldout_q, &greedy, &RayonCollector)?,
            samples_per_query: sampled.samples_per_query,
        };
        write_json(&run_dir.join(&manifest.outputs.eval), &summary)?;
        Some(summary)
    };

    manifest.finish(RunStatus::Completed, None);
    manifest.save(run_dir)?;
    Ok(RunSummary { run_dir: run_dir.to_path_buf(), manifest, metrics: outcome.metrics, params: outcome.params, eval })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayReport {
    pub summary: RunSummary,
    /// Whether the new metrics CSV matches the original byte for byte.
    pub metrics_identical: bool,
}

/// Re-runs the run described by a manifest into `run_dir`. The world file
/// must still hash to the recorded digest.
pub fn replay(manifest_path: &Path, run_dir: &Path, overwrite: bool) -> Result<ReplayReport, Error> {
    let original = RunManifest::load(manifest_path)?;
    let digest = world_file::file_sha256(&original.world_path)?;
    if digest != original.world_sha256 {
        return Err(Error::data(
            &original.world_path,
            format!("world hash {digest} does not match the manifest ({})", original.world_sha256),
        ));
    }
    let src_dir = manifest_path.parent().unwrap_or(Path::new("."));
    let old_metrics = src_dir.join(&original.outputs.metrics);
    let before = std::fs::read(&old_metrics).map_err(|e| Error::io(&old_metrics, e))?;
    let summary = run(&original.config, &original.world_path, run_dir, overwrite)?;
    let new_metrics = run_dir.join(&summary.manifest.outputs.metrics);
    let after = std::fs::read(&new_metrics).map_err(|e| Error::io(&new_metrics, e))?;
    Ok(ReplayReport { summary, metrics_identical: before == after })
}
