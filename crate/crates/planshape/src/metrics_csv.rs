//! Per-step metrics CSV: a header row of [`StepMetrics::COLUMNS`] then one
//! row per step. Floats use Rust's shortest round-trip formatting, so the
//! bytes are a pure function of the values.

use std::fmt::Write as _;
use std::path::Path;

use planshape_core::StepMetrics;

use crate::Error;

pub fn header() -> String {
    let mut s = StepMetrics::COLUMNS.join(",");
    s.push('\n');
    s
}

pub fn row(m: &StepMetrics) -> String {
    let mut s = m.step.to_string();
    for v in &m.values()[1..] {
        write!(s, ",{v}").unwrap();
    }
    s.push('\n');
    s
}

pub fn to_csv(metrics: &[StepMetrics]) -> String {
    let mut s = header();
    for m in metrics {
        s.push_str(&row(m));
    }
    s
}

pub fn parse(text: &str) -> Result<Vec<StepMetrics>, String> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == header().trim_end() => {}
        Some(h) => return Err(format!("unexpected header {h:?}")),
        None => return Err("empty file".into()),
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let bad = |m: &str| format!("row {}: {m}", i + 1);
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != StepMetrics::COLUMNS.len() {
                return Err(bad(&format!("{} cells, expected {}", cells.len(), StepMetrics::COLUMNS.len())));
            }
            let step = cells[0].parse::<usize>().map_err(|e| bad(&e.to_string()))?;
            let mut v = [0.0f64; 12];
            for (slot, c) in v.iter_mut().zip(&cells[1..]) {
                *slot = c.parse::<f64>().map_err(|e| bad(&e.to_string()))?;
            }
            Ok(StepMetrics {
                step,
                mean_reward: v[0],
                frac_reward_0: v[1],
                frac_reward_half: v[2],
                frac_reward_1: v[3],
                entropy_planning: v[4],
                entropy_other: v[5],
                entropy_tool_call: v[6],
                entropy_answer: v[7],
                mean_tool_calls: v[8],
                psi_ratio: v[9],
                selected_fraction: v[10],
                mean_tokens: v[11],
            })
        })
        .collect()
}

pub fn read(path: &Path) -> Result<Vec<StepMetrics>, Error> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse(&text).map_err(|m| Error::data(path, m))
}
