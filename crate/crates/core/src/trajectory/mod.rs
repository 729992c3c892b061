//! Rollout data model: steps of (observation, think segment, action segment),
//! per-token policy statistics, stage labels and the output-format checker.

mod format;
mod token;

use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

pub use format::{parse_tool_call, validate_format, FormatReport, ToolCall, Violation};
pub use token::{
    ActionToken, EntitySlot, ItemKind, Symbol, TokenKind, TokenParseError, PLAN_VARIANTS, RESULT_SLOTS,
    THINK_WORDS, VOCAB_SIZE,
};

/// Coarse class of the latest tool response, as the agent perceives it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum ResponseClass {
    /// No tool has been called yet.
    #[default]
    None,
    /// The top search result's snippet states a fact.
    SearchHit,
    /// Results came back but the top snippet states no fact.
    SearchMiss,
    BrowseFound,
    BrowseMiss,
    Error,
}

impl ResponseClass {
    pub const COUNT: usize = 6;

    pub fn index(self) -> usize {
        self as usize
    }
}

/// What the agent observes at the start of a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Observation {
    /// Relations in the query's chain.
    pub hops: u8,
    /// Tool responses so far that revealed a new entity.
    pub resolved: u8,
    pub last_response: ResponseClass,
    /// Search results available to browse (capped at the url slots).
    pub results: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum ActionKind {
    Plan,
    ToolCall,
    Answer,
}

impl ActionKind {
    /// The kind an opener token starts.
    pub fn of_opener(t: ActionToken) -> Option<ActionKind> {
        match t {
            ActionToken::Plan => Some(ActionKind::Plan),
            ActionToken::Search | ActionToken::Browse => Some(ActionKind::ToolCall),
            ActionToken::Answer => Some(ActionKind::Answer),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Step {
    pub index: u32,
    pub observation: Observation,
    pub think: Vec<ActionToken>,
    pub action_kind: ActionKind,
    pub action: Vec<ActionToken>,
    /// Rendered action: plan text, tool-call JSON, or the answer string.
    pub content: String,
    pub tool_response: Option<String>,
}

impl Step {
    pub fn token_count(&self) -> usize {
        self.think.len() + self.action.len()
    }

    pub fn tokens(&self) -> impl Iterator<Item = ActionToken> + '_ {
        self.think.iter().chain(&self.action).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Stage {
    Planning,
    ToolCall,
    Answer,
    OtherThink,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Planning, Stage::ToolCall, Stage::Answer, Stage::OtherThink];
}

/// Parallel per-token columns, one entry per agent-generated token in step
/// order (think tokens before action tokens).
#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TokenStats {
    pub logprob: Vec<f64>,
    pub entropy: Vec<f64>,
    pub stage: Vec<Stage>,
    pub mask: Vec<bool>,
}

impl TokenStats {
    pub fn len(&self) -> usize {
        self.logprob.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logprob.is_empty()
    }

    pub fn push(&mut self, logprob: f64, entropy: f64, stage: Stage) {
        self.logprob.push(logprob);
        self.entropy.push(entropy);
        self.stage.push(stage);
        self.mask.push(true);
    }

    fn columns_aligned(&self) -> bool {
        let n = self.logprob.len();
        self.entropy.len() == n && self.stage.len() == n && self.mask.len() == n
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Rollout {
    pub query_id: u32,
    pub steps: Vec<Step>,
    pub reward: f64,
    pub per_token: TokenStats,
}

impl Rollout {
    pub fn token_count(&self) -> usize {
        self.steps.iter().map(Step::token_count).sum()
    }

    /// Number of steps whose action is a tool call.
    pub fn tool_calls(&self) -> usize {
        self.steps.iter().filter(|s| s.action_kind == ActionKind::ToolCall).count()
    }

    /// The rendered answer, if the rollout ends with an Answer step.
    pub fn final_answer(&self) -> Option<&str> {
        self.steps
            .last()
            .filter(|s| s.action_kind == ActionKind::Answer)
            .map(|s| s.content.as_str())
    }

    /// Loss-masked tokens.
    pub fn response_len(&self) -> usize {
        self.per_token.mask.iter().filter(|&&m| m).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutGroup {
    pub query_id: u32,
    pub rollouts: Vec<Rollout>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TrajectoryError {
    #[error("rollout has no steps")]
    Empty,
    #[error("step {0} is malformed: {1}")]
    MalformedStep(usize, &'static str),
    #[error("per-token columns cover {columns} tokens but the steps hold {tokens}")]
    Misaligned { columns: usize, tokens: usize },
    #[error("a group needs at least 2 rollouts, got {0}")]
    GroupTooSmall(usize),
    #[error("rollout {index} answers query {found}, group is for {expected}")]
    MixedQueries { index: usize, expected: u32, found: u32 },
}

impl RolloutGroup {
    pub fn new(query_id: u32, rollouts: Vec<Rollout>) -> Result<Self, TrajectoryError> {
        if rollouts.len() < 2 {
            return Err(TrajectoryError::GroupTooSmall(rollouts.len()));
        }
        if let Some((index, r)) = rollouts.iter().enumerate().find(|(_, r)| r.query_id != query_id) {
            return Err(TrajectoryError::MixedQueries { index, expected: query_id, found: r.query_id });
        }
        Ok(Self { query_id, rollouts })
    }

    pub fn len(&self) -> usize {
        self.rollouts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rollouts.is_empty()
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.rollouts.iter().map(|r| r.reward).collect()
    }

    pub fn entropies(&self) -> Vec<Vec<f64>> {
        self.rollouts.iter().map(|r| r.per_token.entropy.clone()).collect()
    }

    /// Total loss-masked tokens across the group.
    pub fn response_tokens(&self) -> usize {
        self.rollouts.iter().map(Rollout::response_len).sum()
    }
}

/// Stage of every token in `step`: everything in a Plan step is Planning,
/// tool-call steps are ToolCall, answer steps Answer. Think tokens of a
/// step with no action opener are OtherThink.
fn step_stage(step: &Step) -> Stage {
    if !step.action.iter().any(|t| t.is_opener()) {
        return Stage::OtherThink;
    }
    match step.action_kind {
        ActionKind::Plan => Stage::Planning,
        ActionKind::ToolCall => Stage::ToolCall,
        ActionKind::Answer => Stage::Answer,
    }
}

/// Stage labels for the rollout's tokens in per-token order.
pub fn stage_labels(steps: &[Step]) -> Result<Vec<Stage>, TrajectoryError> {
    if steps.is_empty() {
        return Err(TrajectoryError::Empty);
    }
    let mut out = Vec::new();
    for (i, step) in steps.iter().enumerate() {
        if step.index as usize != i {
            return Err(TrajectoryError::MalformedStep(i, "step index out of sequence"));
        }
        if step.token_count() == 0 {
            return Err(TrajectoryError::MalformedStep(i, "step has no tokens"));
        }
        out.extend(core::iter::repeat(step_stage(step)).take(step.token_count()));
    }
    Ok(out)
}

/// Returns the rollout with its stage column recomputed from its steps.
pub fn label_stages(mut rollout: Rollout) -> Result<Rollout, TrajectoryError> {
    let stages = stage_labels(&rollout.steps)?;
    if !rollout.per_token.columns_aligned() || rollout.per_token.len() != stages.len() {
        return Err(TrajectoryError::Misaligned { columns: rollout.per_token.len(), tokens: stages.len() });
    }
    rollout.per_token.stage = stages;
    Ok(rollout)
}

/// Token count per stage over loss-masked tokens.
pub fn stage_counts(rollout: &Rollout) -> [usize; 4] {
    let mut counts = [0; 4];
    for (s, &m) in rollout.per_token.stage.iter().zip(&rollout.per_token.mask) {
        if m {
            counts[*s as usize] += 1;
        }
    }
    counts
}
