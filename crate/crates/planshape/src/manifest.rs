//! Run manifests: everything needed to replay a run, written before the
//! first step and rewritten when the run ends.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use planshape_core::trainer::Mode;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::Error;

pub const FORMAT: &str = "planshape-run";
pub const VERSION: u32 = 1;
pub const FILE_NAME: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Completed,
    Aborted,
}

/// Output locations, relative to the run directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Outputs {
    pub metrics: PathBuf,
    pub trajectories: PathBuf,
    pub checkpoints: PathBuf,
    pub train_queries: PathBuf,
    pub heldout_queries: PathBuf,
    pub eval: PathBuf,
}

impl Default for Outputs {
    fn default() -> Self {
        Self {
            metrics: "metrics.csv".into(),
            trajectories: "trajectories".into(),
            checkpoints: "checkpoints".into(),
            train_queries: "queries_train.json".into(),
            heldout_queries: "queries_heldout.json".into(),
            eval: "eval.json".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub version: u32,
    pub code_version: String,
    pub mode: Mode,
    /// Effective configuration after flag overrides.
    pub config: RunConfig,
    pub world_path: PathBuf,
    pub world_sha256: String,
    pub started_unix: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub finished_unix: Option<u64>,
    pub status: RunStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    pub outputs: Outputs,
}

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

impl RunManifest {
    pub fn new(config: RunConfig, world_path: PathBuf, world_sha256: String) -> Self {
        Self {
            format: FORMAT.into(),
            version: VERSION,
            code_version: env!("CARGO_PKG_VERSION").into(),
            mode: config.mode(),
            config,
            world_path,
            world_sha256,
            started_unix: unix_now(),
            finished_unix: None,
            status: RunStatus::Running,
            message: None,
            outputs: Outputs::default(),
        }
    }

    pub fn finish(&mut self, status: RunStatus, message: Option<String>) {
        self.status = status;
        self.message = message;
        self.finished_unix = Some(unix_now());
    }

    pub fn save(&self, run_dir: &Path) -> Result<(), Error> {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        crate::write_file(&run_dir.join(FILE_NAME), text.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: RunManifest =
            serde_json::from_str(&text).map_err(|e| Error::data(path, format!("not a run manifest: {e}")))?;
        if m.format != FORMAT || m.version != VERSION {
            return Err(Error::data(path, format!("unsupported manifest {} v{}", m.format, m.version)));
        }
        Ok(m)
    }
}
