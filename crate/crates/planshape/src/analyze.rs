//! Offline analysis of trajectory logs. Metrics are recomputed with the same
//! shaping and aggregation code the trainer uses in-run.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use planshape_core::shaping::shape_group;
use planshape_core::trainer::step_metrics;
use planshape_core::trajectory::RolloutGroup;
use planshape_core::{Rollout, ShapingConfig, StepMetrics};

use crate::{trajectory_log, Error};

/// One step's worth of logged rollouts.
#[derive(Debug, Clone, PartialEq)]
pub struct StepLog {
    pub step: usize,
    pub path: PathBuf,
    pub rollouts: Vec<Rollout>,
}

fn step_of(path: &Path) -> Option<usize> {
    path.file_stem()?.to_str()?.strip_prefix("step_")?.parse().ok()
}

/// Log files named by `inputs`: files as given, directories expanded to
/// their `*.jsonl` entries in name order.
pub fn collect_paths(inputs: &[PathBuf]) -> Result<Vec<PathBuf>, Error> {
    let mut out = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let rd = std::fs::read_dir(p).map_err(|e| Error::io(p, e))?;
            let mut files = Vec::new();
            for entry in rd {
                let path = entry.map_err(|e| Error::io(p, e))?.path();
                if path.extension().is_some_and(|e| e == "jsonl") {
                    files.push(path);
                }
            }
            files.sort();
            out.extend(files);
        } else {
            out.push(p.clone());
        }
    }
    Ok(out)
}

/// Reads logs. Files named `step_NNNN.jsonl` take their step from the name;
/// others are numbered by position.
pub fn load(paths: &[PathBuf]) -> Result<Vec<StepLog>, Error> {
    paths
        .iter()
        .enumerate()
        .map(|(i, p)| {
            Ok(StepLog { step: step_of(p).unwrap_or(i + 1), path: p.clone(), rollouts: trajectory_log::read(p)? })
        })
        .collect()
}

/// Splits a step's rollouts into groups: fixed-size chunks when the group
/// size is known, else runs of equal `query_id`.
pub fn regroup(rollouts: &[Rollout], group_size: Option<usize>) -> Result<Vec<RolloutGroup>, String> {
    let chunks: Vec<&[Rollout]> = match group_size {
        Some(0) => return Err("group size must be positive".into()),
        Some(g) => {
            if rollouts.len() % g != 0 {
                return Err(format!("{} rollouts do not split into groups of {g}", rollouts.len()));
            }
            rollouts.chunks(g).collect()
        }
        None => rollouts.chunk_by(|a, b| a.query_id == b.query_id).collect(),
    };
    chunks
        .into_iter()
        .map(|c| RolloutGroup::new(c[0].query_id, c.to_vec()).map_err(|e| e.to_string()))
        .collect()
}

pub fn analyze(logs: &[StepLog], shaping: &ShapingConfig, group_size: Option<usize>) -> Result<Vec<StepMetrics>, Error> {
    logs.iter()
        .filter(|l| !l.rollouts.is_empty())
        .map(|l| {
            let groups = regroup(&l.rollouts, group_size).map_err(|m| Error::data(&l.path, m))?;
            let shaped = groups
                .iter()
                .map(|g| shape_group(g, shaping))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| Error::data(&l.path, e.to_string()))?;
            Ok(step_metrics(l.step, &groups, &shaped))
        })
        .collect()
}

fn table(out: &mut String, title: &str, cols: &[&str], rows: impl Iterator<Item = (usize, Vec<f64>)>) {
    writeln!(out, "# {title}").unwrap();
    let mut header = format!("{:>6}", "step");
    for c in cols {
        write!(header, " {c:>18}").unwrap();
    }
    writeln!(out, "{header}").unwrap();
    for (step, vals) in rows {
        write!(out, "{step:>6}").unwrap();
        for v in vals {
            write!(out, " {v:>18.6}").unwrap();
        }
        out.push('\n');
    }
}

/// Stage-entropy, reward-tier and tool-call tables as plain text.
pub fn render_tables(metrics: &[StepMetrics]) -> String {
    let mut out = String::new();
    table(
        &mut out,
        "stage entropy",
        &["planning", "other", "tool_call", "answer"],
        metrics.iter().map(|m| (m.step, vec![m.entropy_planning, m.entropy_other, m.entropy_tool_call, m.entropy_answer])),
    );
    out.push('\n');
    table(
        &mut out,
        "reward tiers",
        &["mean_reward", "reward_0", "reward_0.5", "reward_1"],
        metrics.iter().map(|m| (m.step, vec![m.mean_reward, m.frac_reward_0, m.frac_reward_half, m.frac_reward_1])),
    );
    out.push('\n');
    table(
        &mut out,
        "tool calls",
        &["mean_tool_calls", "selected_fraction", "psi_ratio", "mean_tokens"],
        metrics.iter().map(|m| (m.step, vec![m.mean_tool_calls, m.selected_fraction, m.psi_ratio, m.mean_tokens])),
    );
    out
}
