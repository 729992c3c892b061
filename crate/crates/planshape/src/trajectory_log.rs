//! Trajectory logs: one rollout per line as JSON with the top-level fields
//! `query_id`, `steps`, `reward` and `per_token`.
//!
//! Floats are written in shortest round-trip form and parsed exactly, so
//! parse(serialize(r)) == r bit for bit.

use std::fmt::Write as _;
use std::path::Path;

use planshape_core::Rollout;
use thiserror::Error;

use crate::Error;

/// A bad line. `line` is 1-based; `offset` is the byte offset of the problem
/// from the start of the input.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line} (byte {offset}): {message}")]
pub struct LogError {
    pub line: usize,
    pub offset: usize,
    pub message: String,
}

pub fn to_line(rollout: &Rollout) -> String {
    serde_json::to_string(rollout).expect("rollouts serialize")
}

/// Lines joined with `\n`, each line terminated.
pub fn to_jsonl<'a>(rollouts: impl IntoIterator<Item = &'a Rollout>) -> String {
    let mut out = String::new();
    for r in rollouts {
        writeln!(out, "{}", to_line(r)).unwrap();
    }
    out
}

fn check(r: &Rollout) -> Result<(), String> {
    let tokens = r.token_count();
    let t = &r.per_token;
    for (name, len) in
        [("logprob", t.logprob.len()), ("entropy", t.entropy.len()), ("stage", t.stage.len()), ("mask", t.mask.len())]
    {
        if len != tokens {
            return Err(format!("per_token.{name} has {len} entries for {tokens} tokens"));
        }
    }
    if !(r.reward == 0.0 || r.reward == 0.5 || r.reward == 1.0) {
        return Err(format!("reward {} is not 0, 0.5 or 1", r.reward));
    }
    Ok(())
}

/// Parses a whole log. Blank lines are skipped; an empty input is an empty
/// log.
pub fn parse(text: &str) -> Result<Vec<Rollout>, LogError> {
    let mut out = Vec::new();
    let mut start = 0usize;
    for (i, raw) in text.split_inclusive('\n').enumerate() {
        let line = raw.trim_end_matches(['\n', '\r']);
        let at = |col: usize| start + col.saturating_sub(1);
        if !line.trim().is_empty() {
            let r: Rollout = serde_json::from_str(line).map_err(|e| LogError {
                line: i + 1,
                offset: at(e.column()),
                message: e.to_string(),
            })?;
            check(&r).map_err(|message| LogError { line: i + 1, offset: start, message })?;
            out.push(r);
        }
        start += raw.len();
    }
    Ok(out)
}

pub fn write(path: &Path, rollouts: &[Rollout]) -> Result<(), Error> {
    crate::write_file(path, to_jsonl(rollouts).as_bytes())
}

pub fn read(path: &Path) -> Result<Vec<Rollout>, Error> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse(&text).map_err(|source| Error::Log { path: path.to_path_buf(), source })
}
