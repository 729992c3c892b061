//! Plan-then-execute research agent trained with GRPO and advantage shaping.
//!
//! The crate is `no_std` (it needs `alloc`) and contains everything that is
//! pure computation:
//!
//! * [`world`]: a seeded multi-hop knowledge world with `web_search` and
//!   `web_browse` tool endpoints,
//! * [`trajectory`]: the symbolic token vocabulary, step grammar and rollout
//!   data model,
//! * [`policy`]: a tabular categorical policy with exact log-probabilities,
//!   entropies and clipped-surrogate gradients,
//! * [`reward`]: the format/answer terminal reward,
//! * [`shaping`]: group-relative advantages, entropy-based advantage shaping
//!   and selective advantage upweighting,
//! * [`trainer`]: the RL loop, evaluation and ablation runner.
//!
//! File formats, the CLI and parallel collection live in the `planshape`
//! crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod policy;
pub mod reward;
pub mod rng;
pub mod shaping;
pub mod text;
pub mod trainer;
pub mod trajectory;
pub mod world;

pub use policy::{PolicyParams, TokenDistribution};
pub use reward::{Judge, RewardBreakdown};
pub use shaping::{ShapedAdvantages, ShapingConfig};
pub use trainer::{StepMetrics, TrainConfig};
pub use trajectory::{ActionToken, Rollout, RolloutGroup, Stage, Step};
pub use world::{KnowledgeWorld, Query, SearchCache};
