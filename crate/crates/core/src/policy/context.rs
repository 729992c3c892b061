//! Feature buckets and the per-step constrained decoder. The decoder is the
//! single source of grammar: sampling and replay both drive it.

use alloc::vec::Vec;

use crate::trajectory::{
    ActionKind, ActionToken, EntitySlot, ItemKind, Observation, ResponseClass, Symbol, PLAN_VARIANTS, RESULT_SLOTS,
    THINK_WORDS, VOCAB_SIZE,
};
use crate::world::MAX_HOPS;

use super::PolicyError;

/// Bitmask over the vocabulary, bit `i` for token index `i`.
pub type Mask = u64;

pub fn mask_of(tokens: impl IntoIterator<Item = ActionToken>) -> Mask {
    tokens.into_iter().fold(0, |m, t| m | 1 << t.index())
}

pub fn mask_contains(mask: Mask, t: ActionToken) -> bool {
    mask >> t.index() & 1 == 1
}

/// Legal tokens of `mask` in index order.
pub fn legal_tokens(mask: Mask) -> impl Iterator<Item = usize> {
    (0..VOCAB_SIZE).filter(move |i| mask >> i & 1 == 1)
}

const THINK_POSITIONS: usize = 16;
const PLAN_POSITIONS: usize = 15;
const RESOLVED_LEVELS: usize = MAX_HOPS as usize + 1;
const ITEM_SLOTS: usize = 4;

const OFF_FORCED: usize = 2 * THINK_POSITIONS;
const OFF_ACTION: usize = OFF_FORCED + 1;
const OFF_PLAN: usize = OFF_ACTION + ITEM_SLOTS * ResponseClass::COUNT;
const OFF_SEARCH_ENTITY: usize = OFF_PLAN + MAX_HOPS as usize * PLAN_POSITIONS;
const OFF_SEARCH_RELATION: usize = OFF_SEARCH_ENTITY + RESOLVED_LEVELS;
const OFF_BROWSE: usize = OFF_SEARCH_RELATION + RESOLVED_LEVELS;
const OFF_ANSWER: usize = OFF_BROWSE + ResponseClass::COUNT;

/// Number of feature buckets (rows of the logit table).
pub const N_CONTEXTS: usize = OFF_ANSWER + 1;

/// The feature bucket a token is drawn in. Plan items see the query's hop
/// count; execution decisions see only the plan item at the cursor and the
/// latest response class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Context {
    Think { opening: bool, pos: u8 },
    /// Any position with a single legal token.
    Forced,
    Action { item: Option<ItemKind>, last: ResponseClass },
    PlanItem { hops: u8, pos: u8 },
    SearchEntity { resolved: u8 },
    SearchRelation { resolved: u8 },
    BrowseUrl { last: ResponseClass },
    AnswerEntity,
}

impl Context {
    pub fn index(self) -> usize {
        let clamp = |v: u8, n: usize| (v as usize).min(n - 1);
        match self {
            Context::Think { opening, pos } => opening as usize * THINK_POSITIONS + clamp(pos, THINK_POSITIONS),
            Context::Forced => OFF_FORCED,
            Context::Action { item, last } => {
                let slot = item.map(|k| k.index() + 1).unwrap_or(0);
                OFF_ACTION + slot * ResponseClass::COUNT + last.index()
            }
            Context::PlanItem { hops, pos } => {
                let h = (hops.clamp(1, MAX_HOPS) - 1) as usize;
                OFF_PLAN + h * PLAN_POSITIONS + clamp(pos, PLAN_POSITIONS)
            }
            Context::SearchEntity { resolved } => OFF_SEARCH_ENTITY + clamp(resolved, RESOLVED_LEVELS),
            Context::SearchRelation { resolved } => OFF_SEARCH_RELATION + clamp(resolved, RESOLVED_LEVELS),
            Context::BrowseUrl { last } => OFF_BROWSE + last.index(),
            Context::AnswerEntity => OFF_ANSWER,
        }
    }
}

/// Rollout length caps. Exceeding the step cap truncates the rollout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Limits {
    pub max_steps: usize,
    pub max_segment_tokens: usize,
}

impl Default for Limits {
    fn default() -> Self {
        Self { max_steps: 8, max_segment_tokens: 16 }
    }
}

impl Limits {
    pub fn validate(&self) -> Result<(), PolicyError> {
        if self.max_steps == 0 {
            return Err(PolicyError::Config("max_steps must be at least 1"));
        }
        // think needs a word plus end; every action needs opener, argument, end
        if self.max_segment_tokens < 3 {
            return Err(PolicyError::Config("max_segment_tokens must be at least 3"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Think,
    Opener,
    PlanItems,
    SearchEntity,
    SearchRelation,
    BrowseUrl,
    AnswerEntity,
    Close,
    Done,
}

/// Which half of the step a token belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Segment {
    Think,
    Action,
}

/// Item of the latest plan the executor is at: plans are consumed one item
/// per newly resolved entity.
pub fn cursor_item(plan: &[ItemKind], plan_base: u8, resolved: u8) -> Option<ItemKind> {
    plan.get(resolved.checked_sub(plan_base)? as usize).copied()
}

/// Grammar state for one step.
#[derive(Debug, Clone)]
pub struct StepDecoder {
    obs: Observation,
    first_step: bool,
    item: Option<ItemKind>,
    cap: usize,
    phase: Phase,
    pos: usize,
    kind: Option<ActionKind>,
}

impl StepDecoder {
    pub fn new(obs: Observation, step_index: usize, item: Option<ItemKind>, limits: Limits) -> Self {
        Self {
            obs,
            first_step: step_index == 0,
            item,
            cap: limits.max_segment_tokens,
            phase: Phase::Think,
            pos: 0,
            kind: None,
        }
    }

    pub fn done(&self) -> bool {
        self.phase == Phase::Done
    }

    pub fn action_kind(&self) -> Option<ActionKind> {
        self.kind
    }

    pub fn segment(&self) -> Segment {
        if self.phase == Phase::Think {
            Segment::Think
        } else {
            Segment::Action
        }
    }

    fn mask(&self) -> Mask {
        let think = || (0..THINK_WORDS).map(ActionToken::Think);
        let end = 1 << ActionToken::End.index();
        match self.phase {
            Phase::Think if self.pos == 0 => mask_of(think()),
            Phase::Think if self.pos + 1 >= self.cap => end,
            Phase::Think => mask_of(think()) | end,
            Phase::Opener if self.first_step => mask_of([ActionToken::Plan]),
            Phase::Opener => {
                let mut m = mask_of([ActionToken::Plan, ActionToken::Search, ActionToken::Answer]);
                if self.obs.results > 0 {
                    m |= mask_of([ActionToken::Browse]);
                }
                m
            }
            Phase::PlanItems => {
                let items = mask_of(ItemKind::ALL.into_iter().flat_map(|k| {
                    (0..PLAN_VARIANTS).map(move |v| ActionToken::Arg(Symbol::Item(k, v)))
                }));
                // opener + items + end within the cap
                if self.pos + 2 >= self.cap {
                    end
                } else if self.pos == 0 {
                    items
                } else {
                    items | end
                }
            }
            Phase::SearchEntity | Phase::AnswerEntity => mask_of([
                ActionToken::Arg(Symbol::Entity(EntitySlot::Known)),
                ActionToken::Arg(Symbol::Entity(EntitySlot::Start)),
            ]),
            Phase::SearchRelation => {
                mask_of((1..=self.obs.hops.max(1)).map(|i| ActionToken::Arg(Symbol::Relation(i))))
            }
            Phase::BrowseUrl => {
                mask_of((0..self.obs.results.min(RESULT_SLOTS)).map(|r| ActionToken::Arg(Symbol::Result(r))))
            }
            Phase::Close => end,
            Phase::Done => 0,
        }
    }

    /// Feature bucket and legal-token mask for the next token; `None` once the
    /// step is complete.
    pub fn next(&self) -> Option<(Context, Mask)> {
        if self.done() {
            return None;
        }
        let mask = self.mask();
        if mask.count_ones() == 1 {
            return Some((Context::Forced, mask));
        }
        let ctx = match self.phase {
            Phase::Think => Context::Think { opening: self.first_step, pos: self.pos as u8 },
            Phase::Opener => Context::Action { item: self.item, last: self.obs.last_response },
            Phase::PlanItems => Context::PlanItem { hops: self.obs.hops, pos: self.pos as u8 },
            Phase::SearchEntity => Context::SearchEntity { resolved: self.obs.resolved },
            Phase::SearchRelation => Context::SearchRelation { resolved: self.obs.resolved },
            Phase::BrowseUrl => Context::BrowseUrl { last: self.obs.last_response },
            Phase::AnswerEntity => Context::AnswerEntity,
            Phase::Close | Phase::Done => Context::Forced,
        };
        Some((ctx, mask))
    }

    /// Advances past `t`, which must be legal.
    pub fn push(&mut self, t: ActionToken) -> Result<(), PolicyError> {
        if self.done() || !mask_contains(self.mask(), t) {
            return Err(PolicyError::IllegalToken(t));
        }
        self.phase = match (self.phase, t) {
            (Phase::Think, ActionToken::End) => {
                self.pos = 0;
                Phase::Opener
            }
            (Phase::Think, _) => {
                self.pos += 1;
                Phase::Think
            }
            (Phase::Opener, opener) => {
                self.kind = ActionKind::of_opener(opener);
                self.pos = 0;
                match opener {
                    ActionToken::Plan => Phase::PlanItems,
                    ActionToken::Search => Phase::SearchEntity,
                    ActionToken::Browse => Phase::BrowseUrl,
                    _ => Phase::AnswerEntity,
                }
            }
            (Phase::PlanItems, ActionToken::End) | (Phase::Close, _) => Phase::Done,
            (Phase::PlanItems, _) => {
                self.pos += 1;
                Phase::PlanItems
            }
            (Phase::SearchEntity, _) => Phase::SearchRelation,
            (Phase::SearchRelation | Phase::BrowseUrl | Phase::AnswerEntity, _) => Phase::Close,
            (Phase::Done, _) => Phase::Done,
        };
        Ok(())
    }
}

/// Plan item kinds named by a plan action segment.
pub fn plan_items(action: &[ActionToken]) -> Vec<ItemKind> {
    action
        .iter()
        .filter_map(|t| match t {
            ActionToken::Arg(Symbol::Item(k, _)) => Some(*k),
            _ => None,
        })
        .collect()
}
