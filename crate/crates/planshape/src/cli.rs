//! The `planshape` command line.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error
//! (unreadable or inconsistent files), 3 numerical abort during training.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use planshape_core::policy::Decoding;
use planshape_core::trainer::{evaluate_with, EvalConfig, Mode};
use planshape_core::world::generate_world;
use planshape_core::ShapingConfig;

use crate::config::RunConfig;
use crate::error::exit;
use crate::manifest::RunManifest;
use crate::run::{self, RayonCollector};
use crate::{analyze, checkpoint, metrics_csv, world_file, Error};

/// Default root for run directories when `--out-dir` is not given.
pub const OUT_DIR_ENV: &str = "PLANSHAPE_OUT_DIR";
const DEFAULT_OUT_ROOT: &str = "runs";

#[derive(Debug, Parser)]
#[command(name = "planshape", version, about = "Train a plan-then-execute search agent with shaped GRPO")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a knowledge world and write it as JSON.
    GenWorld(GenWorldArgs),
    /// Train a policy, logging trajectories, metrics and checkpoints.
    Train(TrainArgs),
    /// Recompute per-step metrics from trajectory logs.
    Analyze(AnalyzeArgs),
    /// Score a checkpoint on a query set.
    Eval(EvalArgs),
    /// Re-run a training run from its manifest and compare metrics.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Vanilla,
    Eas,
    Sau,
    Both,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::Vanilla => Mode::Vanilla,
            ModeArg::Eas => Mode::Eas,
            ModeArg::Sau => Mode::Sau,
            ModeArg::Both => Mode::Both,
        }
    }
}

fn parse_hops(s: &str) -> Result<(u8, u8), String> {
    let num = |t: &str| t.trim().parse::<u8>().map_err(|e| format!("bad hop count {t:?}: {e}"));
    match s.split_once('-') {
        Some((a, b)) => Ok((num(a)?, num(b)?)),
        None => num(s).map(|h| (h, h)),
    }
}

#[derive(Debug, Args)]
pub struct GenWorldArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 60)]
    pub entities: usize,
    #[arg(long, default_value_t = 4)]
    pub relations: usize,
    /// Hop depth range, `LO-HI` or a single depth.
    #[arg(long, default_value = "1-2", value_parser = parse_hops)]
    pub hops: (u8, u8),
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// TOML config; flags below override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub world: PathBuf,
    /// Defaults to `$PLANSHAPE_OUT_DIR/<mode>-seed<seed>` (root `runs`).
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Overrides enable_eas and enable_sau.
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub steps: Option<usize>,
    /// Replace the outputs of an earlier run in the same directory.
    #[arg(long)]
    pub overwrite: bool,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Trajectory log files or directories of them.
    #[arg(required = true)]
    pub logs: Vec<PathBuf>,
    /// Take the shaping config and group size from a run manifest.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Shaping rules when no manifest is given.
    #[arg(long, value_enum, default_value = "both")]
    pub mode: ModeArg,
    /// Rollouts per group; without it groups are runs of equal query id.
    #[arg(long)]
    pub group_size: Option<usize>,
    /// Also write the recomputed metrics as CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub world: PathBuf,
    /// JSON list of queries, e.g. a run's `queries_heldout.json`.
    #[arg(long)]
    pub queries: PathBuf,
    /// Argmax decoding, one episode per query.
    #[arg(long)]
    pub greedy: bool,
    /// Sampled episodes per query without `--greedy`.
    #[arg(long, default_value_t = 4)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Config supplying rollout limits, top-k and judge.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Defaults to `$PLANSHAPE_OUT_DIR/replay-<mode>-seed<seed>`.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub overwrite: bool,
}

fn out_root() -> PathBuf {
    std::env::var_os(OUT_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_ROOT))
}

/// Effective config for `train`: defaults, then the file, then flags.
pub fn train_config(args: &TrainArgs) -> Result<RunConfig, Error> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(m) = args.mode {
        cfg.set_mode(m.into());
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(s) = args.steps {
        cfg.steps = s;
    }
    Ok(cfg)
}

fn gen_world(a: &GenWorldArgs, out: &mut dyn Write) -> Result<(), Error> {
    let w = generate_world(a.seed, a.entities, a.relations, a.hops.0..=a.hops.1)?;
    world_file::save(&w, &a.out)?;
    writeln!(out, "wrote {} ({} entities, {} relations)", a.out.display(), w.n_entities(), w.n_labels()).ok();
    Ok(())
}

fn train(a: &TrainArgs, out: &mut dyn Write) -> Result<(), Error> {
    let cfg = train_config(a)?;
    let dir = a.out_dir.clone().unwrap_or_else(|| out_root().join(format!("{}-seed{}", cfg.mode().name(), cfg.seed)));
    let s = run::run(&cfg, &a.world, &dir, a.overwrite)?;
    writeln!(out, "run complete: {} ({} steps, mode {})", dir.display(), s.metrics.len(), cfg.mode().name()).ok();
    if let Some(e) = &s.eval {
        writeln!(
            out,
            "held-out accuracy: sampled {:.4} ({} episodes), greedy {:.4}",
            e.heldout_sampled.accuracy, e.heldout_sampled.episodes, e.heldout_greedy.accuracy
        )
        .ok();
    }
    Ok(())
}

fn analyze_cmd(a: &AnalyzeArgs, out: &mut dyn Write) -> Result<(), Error> {
    let (shaping, group_size) = match &a.manifest {
        Some(p) => {
            let m = RunManifest::load(p)?;
            (m.config.shaping(), Some(a.group_size.unwrap_or(m.config.rollouts_per_query)))
        }
        None => {
            let mut s = ShapingConfig::default();
            Mode::from(a.mode).apply(&mut s);
            (s, a.group_size)
        }
    };
    let logs = analyze::load(&analyze::collect_paths(&a.logs)?)?;
    let metrics = analyze::analyze(&logs, &shaping, group_size)?;
    write!(out, "{}", analyze::render_tables(&metrics)).ok();
    if let Some(p) = &a.out {
        crate::write_file(p, metrics_csv::to_csv(&metrics).as_bytes())?;
    }
    Ok(())
}

fn eval_cmd(a: &EvalArgs, out: &mut dyn Write) -> Result<(), Error> {
    let rc = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let (_, params) = checkpoint::load(&a.checkpoint)?;
    let world = world_file::load(&a.world)?;
    let queries = run::load_queries(&a.queries)?;
    if let Some(q) = queries.iter().find(|q| world.follow(q.start, &q.hop_chain) != Some(q.answer)) {
        return Err(Error::data(&a.queries, format!("query {} does not belong to this world", q.query_id)));
    }
    let (decoding, samples) = if a.greedy { (Decoding::Greedy, 1) } else { (Decoding::Sample, a.samples) };
    let cfg = EvalConfig {
        decoding,
        samples_per_query: samples,
        seed: a.seed,
        limits: rc.limits(),
        top_k: rc.top_k,
        judge: rc.judge,
    };
    let report = evaluate_with(&params, &world, &queries, &cfg, &RayonCollector)?;
    writeln!(out, "{}", serde_json::to_string(&report).expect("report serializes")).ok();
    Ok(())
}

fn replay_cmd(a: &ReplayArgs, out: &mut dyn Write) -> Result<(), Error> {
    let dir = match &a.out_dir {
        Some(d) => d.clone(),
        None => {
            let m = RunManifest::load(&a.manifest)?;
            out_root().join(format!("replay-{}-seed{}", m.mode.name(), m.config.seed))
        }
    };
    let r = run::replay(&a.manifest, &dir, a.overwrite)?;
    if !r.metrics_identical {
        return Err(Error::data(Path::new(&dir), "replayed metrics differ from the original run"));
    }
    writeln!(out, "replay complete: {}; metrics identical", dir.display()).ok();
    Ok(())
}

pub fn dispatch(cli: &Cli, out: &mut dyn Write) -> Result<(), Error> {
    match &cli.command {
        Command::GenWorld(a) => gen_world(a, out),
        Command::Train(a) => train(a, out),
        Command::Analyze(a) => analyze_cmd(a, out),
        Command::Eval(a) => eval_cmd(a, out),
        Command::Replay(a) => replay_cmd(a, out),
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// exit code. Errors go to `err`.
pub fn run_cli<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            write!(out, "{e}").ok();
            return exit::OK;
        }
        Err(e) => {
            write!(err, "{e}").ok();
            return exit::USAGE;
        }
    };
    match dispatch(&cli, out) {
        Ok(()) => exit::OK,
        Err(e) => {
            writeln!(err, "error: {e}").ok();
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hop_ranges() {
        assert_eq!(parse_hops("1-3"), Ok((1, 3)));
        assert_eq!(parse_hops("2"), Ok((2, 2)));
        assert!(parse_hops("a-2").is_err());
    }

    #[test]
    fn mode_flag_beats_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "version = 1\nenable_eas = true\nenable_sau = true\nseed = 4\n").unwrap();
        let cli = Cli::try_parse_from(["planshape", "train", "--config", p.to_str().unwrap(), "--world", "w", "--mode", "vanilla"])
            .unwrap();
        let Command::Train(a) = cli.command else { panic!() };
        let c = train_config(&a).unwrap();
        assert_eq!(c.mode(), Mode::Vanilla);
        assert_eq!(c.seed, 4);
    }

    #[test]
    fn usage_errors_exit_one() {
        let (mut o, mut e) = (Vec::new(), Vec::new());
        assert_eq!(run_cli(["planshape", "train"], &mut o, &mut e), exit::USAGE);
        assert!(String::from_utf8(e).unwrap().contains("--world"));
        let (mut o, mut e) = (Vec::new(), Vec::new());
        assert_eq!(run_cli(["planshape", "--help"], &mut o, &mut e), exit::OK);
        assert!(!o.is_empty());
    }
}
