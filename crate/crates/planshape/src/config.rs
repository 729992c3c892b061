//! Run configuration file: flat TOML with a `version` key.
//!
//! Precedence, lowest first: built-in defaults, the config file, command-line
//! flags. `--mode` replaces both `enable_eas` and `enable_sau`.

use std::path::Path;

use planshape_core::policy::Limits;
use planshape_core::reward::JudgeKind;
use planshape_core::trainer::{Mode, TrainConfig, DEFAULT_LEARNING_RATE};
use planshape_core::world::DEFAULT_TOP_K;
use planshape_core::ShapingConfig;
use serde::{Deserialize, Serialize};

use crate::Error;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub seed: u64,
    pub steps: usize,
    pub batch_queries: usize,
    pub rollouts_per_query: usize,
    pub learning_rate: f64,
    pub clip_eps: f64,
    pub kl_beta: f64,
    pub init_scale: f64,
    pub epochs: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_grad_norm: Option<f64>,
    pub with_replacement: bool,
    pub max_steps: usize,
    pub max_segment_tokens: usize,
    pub top_k: usize,
    pub judge: JudgeKind,

    pub alpha: f64,
    pub kappa: f64,
    pub lambda: f64,
    pub complexity_c: usize,
    pub enable_eas: bool,
    pub enable_sau: bool,

    /// Queries drawn from the world for training and for held-out eval.
    pub train_queries: usize,
    pub heldout_queries: usize,
    pub query_seed: u64,

    /// Checkpoint period in steps; the final step is always written.
    pub checkpoint_every: usize,
    /// Sampled episodes per held-out query in the end-of-run evaluation.
    pub eval_samples: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            version: CONFIG_VERSION,
            seed: t.seed,
            steps: t.steps,
            batch_queries: t.batch_queries,
            rollouts_per_query: t.rollouts_per_query,
            learning_rate: DEFAULT_LEARNING_RATE,
            clip_eps: t.clip_eps,
            kl_beta: t.kl_beta,
            init_scale: t.init_scale,
            epochs: t.epochs,
            max_grad_norm: t.max_grad_norm,
            with_replacement: t.with_replacement,
            max_steps: t.limits.max_steps,
            max_segment_tokens: t.limits.max_segment_tokens,
            top_k: DEFAULT_TOP_K,
            judge: t.judge,
            alpha: t.shaping.alpha,
            kappa: t.shaping.kappa,
            lambda: t.shaping.lambda,
            complexity_c: t.shaping.complexity_c,
            enable_eas: t.shaping.enable_eas,
            enable_sau: t.shaping.enable_sau,
            train_queries: 192,
            heldout_queries: 96,
            query_seed: 3,
            checkpoint_every: 8,
            eval_samples: 4,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, Error> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if cfg.version != CONFIG_VERSION {
            return Err(Error::Config(format!("config version {} is not supported (expected {CONFIG_VERSION})", cfg.version)));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("flat config always serializes")
    }

    pub fn set_mode(&mut self, mode: Mode) {
        let mut s = self.shaping();
        mode.apply(&mut s);
        self.enable_eas = s.enable_eas;
        self.enable_sau = s.enable_sau;
    }

    pub fn mode(&self) -> Mode {
        match (self.enable_eas, self.enable_sau) {
            (false, false) => Mode::Vanilla,
            (true, false) => Mode::Eas,
            (false, true) => Mode::Sau,
            (true, true) => Mode::Both,
        }
    }

    pub fn shaping(&self) -> ShapingConfig {
        ShapingConfig {
            alpha: self.alpha,
            kappa: self.kappa,
            lambda: self.lambda,
            complexity_c: self.complexity_c,
            enable_eas: self.enable_eas,
            enable_sau: self.enable_sau,
        }
    }

    pub fn limits(&self) -> Limits {
        Limits { max_steps: self.max_steps, max_segment_tokens: self.max_segment_tokens }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_queries: self.batch_queries,
            rollouts_per_query: self.rollouts_per_query,
            steps: self.steps,
            learning_rate: self.learning_rate,
            clip_eps: self.clip_eps,
            kl_beta: self.kl_beta,
            shaping: self.shaping(),
            seed: self.seed,
            init_scale: self.init_scale,
            epochs: self.epochs,
            max_grad_norm: self.max_grad_norm,
            with_replacement: self.with_replacement,
            limits: self.limits(),
            top_k: self.top_k,
            judge: self.judge,
        }
    }

    /// Checks everything the trainer checks plus the runner's own keys.
    pub fn validate(&self) -> Result<(), Error> {
        self.train_config().validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.train_queries == 0 {
            return Err(Error::Config("train_queries must be at least 1".into()));
        }
        if self.checkpoint_every == 0 {
            return Err(Error::Config("checkpoint_every must be at least 1".into()));
        }
        Ok(())
    }
}
