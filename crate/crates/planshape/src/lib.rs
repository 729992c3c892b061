//! File formats, the experiment runner and the `planshape` command line on
//! top of [`planshape_core`].
//!
//! A run directory holds:
//!
//! * `manifest.json`: effective config, world path and SHA-256, timestamps,
//! * `metrics.csv`: one row per step,
//! * `trajectories/step_NNNN.jsonl`: every rollout of the step, one per line,
//! * `checkpoints/step_NNNN.json`: periodic policy snapshots,
//! * `queries_train.json`, `queries_heldout.json` and `eval.json`.

pub mod analyze;
pub mod checkpoint;
pub mod cli;
pub mod config;
mod error;
pub mod manifest;
pub mod metrics_csv;
pub mod run;
pub mod trajectory_log;
pub mod world_file;

use std::path::Path;

pub use error::{exit, Error};

/// Writes `bytes` to `path`, creating parent directories.
pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), Error> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
