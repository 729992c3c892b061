//! The training loop: batch sampling, rollout collection, scoring, shaping,
//! surrogate ascent and per-step metrics. Also evaluation and the four-way
//! ablation runner.

use alloc::boxed::Box;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::policy::{
    apply_update, sample_rollout, Decoding, Limits, PolicyError, PolicyParams, PreparedGroup, SurrogateGrad,
};
use crate::reward::{score, JudgeKind};
use crate::rng;
use crate::shaping::{shape_group, ShapedAdvantages, ShapingConfig, ShapingError};
use crate::trajectory::{Rollout, RolloutGroup, Stage, TrajectoryError};
use crate::world::{KnowledgeWorld, Query, DEFAULT_TOP_K};

/// Learning rate of the tabular policy. Tuned once on the default world; see
/// the README for the sweep.
pub const DEFAULT_LEARNING_RATE: f64 = 200.0;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainConfig {
    pub batch_queries: usize,
    pub rollouts_per_query: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub clip_eps: f64,
    pub kl_beta: f64,
    pub shaping: ShapingConfig,
    pub seed: u64,
    /// Uniform init half-width; 0 starts from the uniform policy.
    pub init_scale: f64,
    /// Gradient steps per collected batch. Above 1 the ratios leave 1 and
    /// clipping engages.
    pub epochs: usize,
    pub max_grad_norm: Option<f64>,
    /// Sample batch queries with replacement instead of epoch shuffles.
    pub with_replacement: bool,
    pub limits: Limits,
    pub top_k: usize,
    pub judge: JudgeKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_queries: 64,
            rollouts_per_query: 8,
            steps: 48,
            learning_rate: DEFAULT_LEARNING_RATE,
            clip_eps: 0.2,
            kl_beta: 0.0,
            shaping: ShapingConfig::default(),
            seed: 0,
            init_scale: 0.0,
            epochs: 1,
            max_grad_norm: None,
            with_replacement: false,
            limits: Limits::default(),
            top_k: DEFAULT_TOP_K,
            judge: JudgeKind::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &'static str| Err(TrainError::Config(m));
        if self.batch_queries == 0 {
            return bad("batch_queries must be at least 1");
        }
        if self.rollouts_per_query < 2 {
            return bad("rollouts_per_query must be at least 2");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and non-negative");
        }
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return bad("clip_eps must lie in (0, 1)");
        }
        if !(self.kl_beta >= 0.0 && self.kl_beta.is_finite()) {
            return bad("kl_beta must be finite and non-negative");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.top_k == 0 {
            return bad("top_k must be at least 1");
        }
        if let Some(n) = self.max_grad_norm {
            if !(n > 0.0) {
                return bad("max_grad_norm must be positive");
            }
        }
        self.shaping.validate()?;
        self.limits.validate()?;
        Ok(())
    }
}

/// Which shaping rules are on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Mode {
    Vanilla,
    Eas,
    Sau,
    Both,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Vanilla, Mode::Eas, Mode::Sau, Mode::Both];

    pub fn apply(self, shaping: &mut ShapingConfig) {
        shaping.enable_eas = matches!(self, Mode::Eas | Mode::Both);
        shaping.enable_sau = matches!(self, Mode::Sau | Mode::Both);
    }

    pub fn name(self) -> &'static str {
        match self {
            Mode::Vanilla => "vanilla",
            Mode::Eas => "eas",
            Mode::Sau => "sau",
            Mode::Both => "both",
        }
    }
}

impl core::str::FromStr for Mode {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Mode::ALL.into_iter().find(|m| m.name() == s).ok_or(TrainError::Config("mode must be vanilla, eas, sau or both"))
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(&'static str),
    #[error("batch of {batch} queries needs sampling with replacement; only {available} queries given")]
    NotEnoughQueries { batch: usize, available: usize },
    #[error("no queries to evaluate")]
    EmptyEvalSet,
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Shaping(#[from] ShapingError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error("numerical abort at step {step}: {reason}")]
    NumericalAbort { step: usize, reason: String, last_good: Box<PolicyParams> },
    #[error("observer failed at step {step}: {message}")]
    Observer { step: usize, message: String },
}

/// Per-step training diagnostics, computed from the step's rollouts before
/// the update.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StepMetrics {
    /// 1-based.
    pub step: usize,
    pub mean_reward: f64,
    pub frac_reward_0: f64,
    pub frac_reward_half: f64,
    pub frac_reward_1: f64,
    pub entropy_planning: f64,
    /// All loss-masked tokens outside Planning steps.
    pub entropy_other: f64,
    pub entropy_tool_call: f64,
    pub entropy_answer: f64,
    pub mean_tool_calls: f64,
    /// Mean ψ/|A| over tokens whose post-upweighting advantage is nonzero.
    pub psi_ratio: f64,
    pub selected_fraction: f64,
    pub mean_tokens: f64,
}

impl StepMetrics {
    pub const COLUMNS: [&'static str; 13] = [
        "step",
        "mean_reward",
        "frac_reward_0",
        "frac_reward_half",
        "frac_reward_1",
        "entropy_planning",
        "entropy_other",
        "entropy_tool_call",
        "entropy_answer",
        "mean_tool_calls",
        "psi_ratio",
        "selected_fraction",
        "mean_tokens",
    ];

    /// Values in [`Self::COLUMNS`] order, the step as a float.
    pub fn values(&self) -> [f64; 13] {
        [
            self.step as f64,
            self.mean_reward,
            self.frac_reward_0,
            self.frac_reward_half,
            self.frac_reward_1,
            self.entropy_planning,
            self.entropy_other,
            self.entropy_tool_call,
            self.entropy_answer,
            self.mean_tool_calls,
            self.psi_ratio,
            self.selected_fraction,
            self.mean_tokens,
        ]
    }
}

#[derive(Default)]
struct Mean {
    sum: f64,
    n: usize,
}

impl Mean {
    fn add(&mut self, x: f64) {
        self.sum += x;
        self.n += 1;
    }

    fn get(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.sum / self.n as f64
        }
    }
}

/// Step aggregates over scored groups and their shaped advantages. Shared
/// by the trainer and by offline log analysis.
pub fn step_metrics(step: usize, groups: &[RolloutGroup], shaped: &[ShapedAdvantages]) -> StepMetrics {
    let mut reward = Mean::default();
    let mut tiers = [0usize; 3];
    let mut by_stage: [Mean; 4] = Default::default();
    let mut other = Mean::default();
    let mut tools = Mean::default();
    let mut tokens = Mean::default();
    let mut ratio = Mean::default();
    let mut selected = Mean::default();
    for (g, s) in groups.iter().zip(shaped) {
        for (r, adv) in g.rollouts.iter().zip(&s.rollouts) {
            reward.add(r.reward);
            if r.reward == 0.0 {
                tiers[0] += 1;
            } else if r.reward == 0.5 {
                tiers[1] += 1;
            } else if r.reward == 1.0 {
                tiers[2] += 1;
            }
            tools.add(r.tool_calls() as f64);
            tokens.add(r.response_len() as f64);
            selected.add(if adv.sau_selected { 1.0 } else { 0.0 });
            let pt = &r.per_token;
            for ((h, st), &m) in pt.entropy.iter().zip(&pt.stage).zip(&pt.mask) {
                if m {
                    by_stage[*st as usize].add(*h);
                    if *st != Stage::Planning {
                        other.add(*h);
                    }
                }
            }
            let a = adv.sau_scaled.abs();
            if a > 0.0 {
                for p in &adv.psi {
                    ratio.add(p / a);
                }
            }
        }
    }
    let n = reward.n.max(1) as f64;
    StepMetrics {
        step,
        mean_reward: reward.get(),
        frac_reward_0: tiers[0] as f64 / n,
        frac_reward_half: tiers[1] as f64 / n,
        frac_reward_1: tiers[2] as f64 / n,
        entropy_planning: by_stage[Stage::Planning as usize].get(),
        entropy_other: other.get(),
        entropy_tool_call: by_stage[Stage::ToolCall as usize].get(),
        entropy_answer: by_stage[Stage::Answer as usize].get(),
        mean_tool_calls: tools.get(),
        psi_ratio: ratio.get(),
        selected_fraction: selected.get(),
        mean_tokens: tokens.get(),
    }
}

/// One rollout to collect: its query and the seed of its private stream.
#[derive(Debug, Clone, Copy)]
pub struct RolloutJob<'a> {
    pub query: &'a Query,
    pub seed: u64,
}

/// Settings shared by every job in one collection phase.
#[derive(Debug, Clone, Copy)]
pub struct CollectSettings {
    pub limits: Limits,
    pub top_k: usize,
    pub decoding: Decoding,
}

pub fn run_job(
    params: &PolicyParams,
    world: &KnowledgeWorld,
    job: &RolloutJob<'_>,
    settings: &CollectSettings,
) -> Result<Rollout, PolicyError> {
    let mut rng = ChaCha8Rng::seed_from_u64(job.seed);
    sample_rollout(params, world, job.query, &mut rng, settings.limits, settings.top_k, settings.decoding)
}

/// Runs a batch of jobs, returning rollouts in job order.
pub trait Collector {
    fn collect(
        &self,
        params: &PolicyParams,
        world: &KnowledgeWorld,
        jobs: &[RolloutJob<'_>],
        settings: &CollectSettings,
    ) -> Result<Vec<Rollout>, PolicyError>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SerialCollector;

impl Collector for SerialCollector {
    fn collect(
        &self,
        params: &PolicyParams,
        world: &KnowledgeWorld,
        jobs: &[RolloutJob<'_>],
        settings: &CollectSettings,
    ) -> Result<Vec<Rollout>, PolicyError> {
        jobs.iter().map(|j| run_job(params, world, j, settings)).collect()
    }
}

/// A finished step as seen by an observer.
pub struct StepRecord<'a> {
    pub step: usize,
    pub groups: &'a [RolloutGroup],
    pub shaped: &'a [ShapedAdvantages],
    pub metrics: &'a StepMetrics,
    /// Parameters after this step's update.
    pub params: &'a PolicyParams,
}

/// Receives every step in order; logging and checkpointing hook in here.
pub trait Observer {
    fn on_step(&mut self, record: &StepRecord<'_>) -> Result<(), String>;
}

impl Observer for () {
    fn on_step(&mut self, _: &StepRecord<'_>) -> Result<(), String> {
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: PolicyParams,
    pub metrics: Vec<StepMetrics>,
}

struct BatchSampler {
    n: usize,
    batch: usize,
    seed: u64,
    with_replacement: bool,
    order: Vec<usize>,
    cursor: usize,
    epoch: u64,
}

impl BatchSampler {
    fn new(n: usize, batch: usize, seed: u64, with_replacement: bool) -> Result<Self, TrainError> {
        if n == 0 || (!with_replacement && batch > n) {
            return Err(TrainError::NotEnoughQueries { batch, available: n });
        }
        Ok(Self { n, batch, seed, with_replacement, order: Vec::new(), cursor: n, epoch: 0 })
    }

    fn next(&mut self, step: usize) -> Vec<usize> {
        if self.with_replacement {
            let mut r = rng::stream(self.seed, &[2, step as u64]);
            return (0..self.batch).map(|_| r.gen_range(0..self.n)).collect();
        }
        if self.cursor + self.batch > self.n {
            self.order = (0..self.n).collect();
            self.order.shuffle(&mut rng::stream(self.seed, &[1, self.epoch]));
            self.epoch += 1;
            self.cursor = 0;
        }
        let out = self.order[self.cursor..self.cursor + self.batch].to_vec();
        self.cursor += self.batch;
        out
    }
}

fn scored_groups(
    params: &PolicyParams,
    world: &KnowledgeWorld,
    queries: &[&Query],
    g: usize,
    seed_of: impl Fn(usize, &Query, usize) -> u64,
    settings: &CollectSettings,
    judge: JudgeKind,
    collector: &impl Collector,
) -> Result<Vec<RolloutGroup>, TrainError> {
    let jobs: Vec<RolloutJob<'_>> = queries
        .iter()
        .enumerate()
        .flat_map(|(slot, q)| (0..g).map(move |i| (slot, *q, i)))
        .map(|(slot, q, i)| RolloutJob { query: q, seed: seed_of(slot, q, i) })
        .collect();
    let mut rollouts = collector.collect(params, world, &jobs, settings)?.into_iter();
    let judge = judge.judge();
    queries
        .iter()
        .map(|q| {
            let mut group: Vec<Rollout> = rollouts.by_ref().take(g).collect();
            for r in &mut group {
                r.reward = score(r, q, judge).total;
            }
            Ok(RolloutGroup::new(q.query_id, group)?)
        })
        .collect()
}

/// Mean surrogate gradient over groups at `params`.
pub fn batch_gradient(
    params: &PolicyParams,
    prepared: &[PreparedGroup],
    clip_eps: f64,
    kl_beta: f64,
) -> Result<SurrogateGrad, PolicyError> {
    let mut total = SurrogateGrad::zeros();
    let w = 1.0 / prepared.len().max(1) as f64;
    for p in prepared {
        total.add_scaled(&p.evaluate(params, clip_eps, kl_beta)?, w);
    }
    Ok(total)
}

/// Trains from `init`. Each step's rollouts, advantages, metrics and updated
/// parameters are handed to `observer` before the next step starts.
pub fn train_with(
    cfg: &TrainConfig,
    world: &KnowledgeWorld,
    queries: &[Query],
    init: PolicyParams,
    collector: &impl Collector,
    observer: &mut impl Observer,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    let mut params = init;
    let mut metrics = Vec::with_capacity(cfg.steps);
    if cfg.steps == 0 {
        return Ok(TrainOutcome { params, metrics });
    }
    let mut sampler = BatchSampler::new(queries.len(), cfg.batch_queries, cfg.seed, cfg.with_replacement)?;
    let settings = CollectSettings { limits: cfg.limits, top_k: cfg.top_k, decoding: Decoding::Sample };
    for step in 1..=cfg.steps {
        let batch: Vec<&Query> = sampler.next(step).into_iter().map(|i| &queries[i]).collect();
        let seed_of = |slot: usize, q: &Query, i: usize| {
            rng::derive(cfg.seed, &[3, step as u64, slot as u64, q.query_id as u64, i as u64])
        };
        let groups =
            scored_groups(&params, world, &batch, cfg.rollouts_per_query, seed_of, &settings, cfg.judge, collector)?;
        let shaped = groups.iter().map(|g| shape_group(g, &cfg.shaping)).collect::<Result<Vec<_>, _>>()?;
        let m = step_metrics(step, &groups, &shaped);
        let prepared = groups
            .iter()
            .zip(&shaped)
            .map(|(g, s)| PreparedGroup::new(g, s, cfg.limits))
            .collect::<Result<Vec<_>, _>>()?;
        for _ in 0..cfg.epochs {
            let abort = |reason: String| TrainError::NumericalAbort { step, reason, last_good: Box::new(params.clone()) };
            let grad = batch_gradient(&params, &prepared, cfg.clip_eps, cfg.kl_beta).map_err(|e| abort(e.to_string()))?;
            if !grad.objective_value.is_finite() {
                return Err(abort(String::from("objective is not finite")));
            }
            params = apply_update(&params, &grad, cfg.learning_rate, cfg.max_grad_norm).map_err(|e| abort(e.to_string()))?;
        }
        observer
            .on_step(&StepRecord { step, groups: &groups, shaped: &shaped, metrics: &m, params: &params })
            .map_err(|message| TrainError::Observer { step, message })?;
        metrics.push(m);
    }
    Ok(TrainOutcome { params, metrics })
}

/// Serial training from the configured initialization.
pub fn train(cfg: &TrainConfig, world: &KnowledgeWorld, queries: &[Query]) -> Result<TrainOutcome, TrainError> {
    let init = PolicyParams::init(rng::derive(cfg.seed, &[0]), cfg.init_scale)?;
    train_with(cfg, world, queries, init, &SerialCollector, &mut ())
}

/// Initial parameters `train` starts from.
pub fn initial_params(cfg: &TrainConfig) -> Result<PolicyParams, TrainError> {
    Ok(PolicyParams::init(rng::derive(cfg.seed, &[0]), cfg.init_scale)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalConfig {
    pub decoding: Decoding,
    /// Episodes per query; greedy decoding ignores it and runs one.
    pub samples_per_query: usize,
    pub seed: u64,
    pub limits: Limits,
    pub top_k: usize,
    pub judge: JudgeKind,
}

impl EvalConfig {
    pub fn greedy() -> Self {
        Self {
            decoding: Decoding::Greedy,
            samples_per_query: 1,
            seed: 0,
            limits: Limits::default(),
            top_k: DEFAULT_TOP_K,
            judge: JudgeKind::default(),
        }
    }

    pub fn sampled(samples_per_query: usize, seed: u64) -> Self {
        Self { decoding: Decoding::Sample, samples_per_query, seed, ..Self::greedy() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EvalReport {
    /// Fraction of episodes with reward 1.0.
    pub accuracy: f64,
    pub mean_tool_calls: f64,
    pub episodes: usize,
}

pub fn evaluate_with(
    params: &PolicyParams,
    world: &KnowledgeWorld,
    queries: &[Query],
    cfg: &EvalConfig,
    collector: &impl Collector,
) -> Result<EvalReport, TrainError> {
    if queries.is_empty() {
        return Err(TrainError::EmptyEvalSet);
    }
    let per = if cfg.decoding == Decoding::Greedy { 1 } else { cfg.samples_per_query.max(1) };
    let settings = CollectSettings { limits: cfg.limits, top_k: cfg.top_k, decoding: cfg.decoding };
    let jobs: Vec<RolloutJob<'_>> = queries
        .iter()
        .flat_map(|q| {
            (0..per).map(move |i| RolloutJob { query: q, seed: rng::derive(cfg.seed, &[4, q.query_id as u64, i as u64]) })
        })
        .collect();
    let rollouts = collector.collect(params, world, &jobs, &settings)?;
    let judge = cfg.judge.judge();
    let (mut correct, mut calls) = (0usize, 0usize);
    for (r, j) in rollouts.iter().zip(&jobs) {
        if score(r, j.query, judge).total == 1.0 {
            correct += 1;
        }
        calls += r.tool_calls();
    }
    let n = rollouts.len();
    Ok(EvalReport { accuracy: correct as f64 / n as f64, mean_tool_calls: calls as f64 / n as f64, episodes: n })
}

/// Serial evaluation; `greedy` picks argmax decoding, otherwise one sampled
/// episode per query with seed 0.
pub fn evaluate(
    params: &PolicyParams,
    world: &KnowledgeWorld,
    queries: &[Query],
    greedy: bool,
) -> Result<EvalReport, TrainError> {
    let cfg = if greedy { EvalConfig::greedy() } else { EvalConfig::sampled(1, 0) };
    evaluate_with(params, world, queries, &cfg, &SerialCollector)
}

/// The four shaping configurations run from identical seeds.
pub fn compare_ablations(
    cfg: &TrainConfig,
    world: &KnowledgeWorld,
    queries: &[Query],
    collector: &impl Collector,
) -> Result<Vec<(Mode, TrainOutcome)>, TrainError> {
    Mode::ALL
        .into_iter()
        .map(|mode| {
            let mut c = cfg.clone();
            mode.apply(&mut c.shaping);
            let init = initial_params(&c)?;
            Ok((mode, train_with(&c, world, queries, init, collector, &mut ())?))
        })
        .collect()
}
