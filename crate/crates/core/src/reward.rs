//! Terminal reward: half for format, half for a correct answer, and a format
//! failure zeroes the total regardless of the answer.

use crate::text::normalize_answer;
use crate::trajectory::{validate_format, Rollout};
use crate::world::Query;

/// Answer-matching strategy.
pub trait Judge {
    fn name(&self) -> &str;
    fn matches(&self, prediction: &str, gold: &str) -> bool;
}

/// Case-, punctuation- and article-insensitive exact match.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct NormalizedExactMatch;

impl Judge for NormalizedExactMatch {
    fn name(&self) -> &str {
        "normalized_exact_match"
    }

    fn matches(&self, prediction: &str, gold: &str) -> bool {
        normalize_answer(prediction) == normalize_answer(gold)
    }
}

/// Judges selectable by name in configuration.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum JudgeKind {
    #[default]
    NormalizedExactMatch,
}

impl JudgeKind {
    pub fn judge(self) -> &'static dyn Judge {
        match self {
            JudgeKind::NormalizedExactMatch => &NormalizedExactMatch,
        }
    }
}

pub fn judge_match(prediction: &str, gold: &str, judge: &dyn Judge) -> bool {
    judge.matches(prediction, gold)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardBreakdown {
    pub format_ok: bool,
    pub answer_ok: bool,
    pub total: f64,
}

impl RewardBreakdown {
    pub fn new(format_ok: bool, answer_ok: bool) -> Self {
        let total = match (format_ok, answer_ok) {
            (false, _) => 0.0,
            (true, false) => 0.5,
            (true, true) => 1.0,
        };
        Self { format_ok, answer_ok, total }
    }

    /// Inverse of `total` for logged rewards; the verdict pair is only
    /// recoverable up to the answer of format failures.
    pub fn from_total(total: f64) -> Option<Self> {
        match total {
            t if t == 0.0 => Some(Self::new(false, false)),
            t if t == 0.5 => Some(Self::new(true, false)),
            t if t == 1.0 => Some(Self::new(true, true)),
            _ => None,
        }
    }
}

pub fn score(rollout: &Rollout, query: &Query, judge: &dyn Judge) -> RewardBreakdown {
    let format_ok = validate_format(rollout).valid;
    let answer_ok = rollout.final_answer().map(|a| judge.matches(a, &query.answer_name)).unwrap_or(false);
    RewardBreakdown::new(format_ok, answer_ok)
}
