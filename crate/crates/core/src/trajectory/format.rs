//! Output-format rules: a plan in the first round, exactly one action per
//! step, schema-valid tool calls, and a terminal answer.

use alloc::vec::Vec;

use super::{ActionKind, ActionToken, Rollout, Step, Symbol};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Violation {
    /// Step 0 is not a plan.
    MissingInitialPlan,
    MissingAction { step: usize },
    MultipleActions { step: usize },
    /// The opener does not match the step's declared action kind.
    ActionKindMismatch { step: usize },
    /// Think segment holds non-think tokens or is unterminated.
    MalformedThink { step: usize },
    SchemaViolation { step: usize },
    MalformedPlan { step: usize },
    MalformedAnswer { step: usize },
    /// Tool response present on a non-tool step or missing on a tool step.
    ToolResponseMismatch { step: usize },
    /// An answer before the final step.
    EarlyAnswer { step: usize },
    NoTerminalAnswer,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FormatReport {
    pub valid: bool,
    pub violations: Vec<Violation>,
}

/// A tool call decoded from an action segment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ToolCall {
    /// `web_search` with one query built from the argument words.
    WebSearch { query: Vec<Symbol> },
    /// `browse_webpage` with result-rank references.
    BrowseWebpage { url_list: Vec<u8> },
}

impl ToolCall {
    pub fn name(&self) -> &'static str {
        match self {
            ToolCall::WebSearch { .. } => "web_search",
            ToolCall::BrowseWebpage { .. } => "browse_webpage",
        }
    }
}

/// Parses `opener arg+ end` under the tool schema: `web_search` requires a
/// non-empty query made of entity/relation words, `browse_webpage` a
/// non-empty url list.
pub fn parse_tool_call(action: &[ActionToken]) -> Option<ToolCall> {
    let (&opener, rest) = action.split_first()?;
    let (&last, args) = rest.split_last()?;
    if last != ActionToken::End || args.is_empty() {
        return None;
    }
    match opener {
        ActionToken::Search => args
            .iter()
            .map(|t| match t {
                ActionToken::Arg(s @ (Symbol::Entity(_) | Symbol::Relation(_))) => Some(*s),
                _ => None,
            })
            .collect::<Option<Vec<_>>>()
            .map(|query| ToolCall::WebSearch { query }),
        ActionToken::Browse => args
            .iter()
            .map(|t| match t {
                ActionToken::Arg(Symbol::Result(r)) => Some(*r),
                _ => None,
            })
            .collect::<Option<Vec<_>>>()
            .map(|url_list| ToolCall::BrowseWebpage { url_list }),
        _ => None,
    }
}

fn plan_ok(action: &[ActionToken]) -> bool {
    matches!(action, [ActionToken::Plan, items @ .., ActionToken::End]
        if !items.is_empty() && items.iter().all(|t| matches!(t, ActionToken::Arg(Symbol::Item(..)))))
}

fn answer_ok(action: &[ActionToken]) -> bool {
    matches!(action, [ActionToken::Answer, ActionToken::Arg(Symbol::Entity(_)), ActionToken::End])
}

fn think_ok(think: &[ActionToken]) -> bool {
    match think.split_last() {
        None => true,
        Some((&last, body)) => {
            last == ActionToken::End && body.iter().all(|t| matches!(t, ActionToken::Think(_)))
        }
    }
}

fn check_step(i: usize, step: &Step, out: &mut Vec<Violation>) {
    if !think_ok(&step.think) {
        out.push(Violation::MalformedThink { step: i });
    }
    let openers: Vec<ActionToken> = step.action.iter().copied().filter(|t| t.is_opener()).collect();
    match openers.len() {
        0 => {
            out.push(Violation::MissingAction { step: i });
            return;
        }
        1 => {}
        _ => {
            out.push(Violation::MultipleActions { step: i });
            return;
        }
    }
    if ActionKind::of_opener(openers[0]) != Some(step.action_kind) || step.action[0] != openers[0] {
        out.push(Violation::ActionKindMismatch { step: i });
        return;
    }
    if step.tool_response.is_some() != (step.action_kind == ActionKind::ToolCall) {
        out.push(Violation::ToolResponseMismatch { step: i });
    }
    match step.action_kind {
        ActionKind::Plan if !plan_ok(&step.action) => out.push(Violation::MalformedPlan { step: i }),
        ActionKind::ToolCall if parse_tool_call(&step.action).is_none() => {
            out.push(Violation::SchemaViolation { step: i })
        }
        ActionKind::Answer if !answer_ok(&step.action) => out.push(Violation::MalformedAnswer { step: i }),
        _ => {}
    }
}

/// Checks every format rule; violations are collected, never raised.
pub fn validate_format(rollout: &Rollout) -> FormatReport {
    let mut violations = Vec::new();
    let steps = &rollout.steps;
    let first_is_plan = steps
        .first()
        .map(|s| s.action_kind == ActionKind::Plan && s.action.first() == Some(&ActionToken::Plan))
        .unwrap_or(false);
    if !first_is_plan {
        violations.push(Violation::MissingInitialPlan);
    }
    for (i, step) in steps.iter().enumerate() {
        check_step(i, step, &mut violations);
        if step.action_kind == ActionKind::Answer && i + 1 < steps.len() {
            violations.push(Violation::EarlyAnswer { step: i });
        }
    }
    if steps.last().map(|s| s.action_kind) != Some(ActionKind::Answer) {
        violations.push(Violation::NoTerminalAnswer);
    }
    FormatReport { valid: violations.is_empty(), violations }
}
