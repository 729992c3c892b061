//! The plan-then-execute agent loop: decodes steps from the policy, runs
//! tool calls against the world and records behavior-policy statistics.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use crate::text;
use crate::trajectory::{
    label_stages, parse_tool_call, ActionKind, ActionToken, EntitySlot, ItemKind, Observation, ResponseClass,
    Rollout, Step, Symbol, TokenStats, ToolCall, RESULT_SLOTS,
};
use crate::world::{
    render_browse, render_search, web_browse, web_search, EntityId, KnowledgeWorld, Query, SearchCache,
    SearchResponse, SearchResult, Triple,
};

use super::context::{cursor_item, plan_items, Context, Limits, Mask, StepDecoder};
use super::{next_distribution, PolicyError, PolicyParams};

/// How tokens are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decoding {
    /// Sample from the masked softmax at temperature 1.
    Sample,
    /// Argmax, ties to the lowest token index.
    Greedy,
}

/// Agent-side state threaded through a rollout.
struct Harness<'a> {
    world: &'a KnowledgeWorld,
    query: &'a Query,
    top_k: usize,
    cache: SearchCache,
    known: EntityId,
    resolved: u8,
    last: ResponseClass,
    results: Vec<SearchResult>,
    last_query: String,
}

impl<'a> Harness<'a> {
    fn new(world: &'a KnowledgeWorld, query: &'a Query, top_k: usize) -> Self {
        Self {
            world,
            query,
            top_k,
            cache: SearchCache::new(),
            known: query.start,
            resolved: 0,
            last: ResponseClass::None,
            results: Vec::new(),
            last_query: String::new(),
        }
    }

    fn observation(&self) -> Observation {
        Observation {
            hops: self.query.hops() as u8,
            resolved: self.resolved,
            last_response: self.last,
            results: self.results.len().min(RESULT_SLOTS as usize) as u8,
        }
    }

    fn entity(&self, slot: EntitySlot) -> EntityId {
        match slot {
            EntitySlot::Known => self.known,
            EntitySlot::Start => self.query.start,
        }
    }

    fn word(&self, s: Symbol) -> String {
        match s {
            Symbol::Entity(slot) => self.world.entity_name(self.entity(slot)).into(),
            Symbol::Relation(i) => self
                .query
                .hop_chain
                .get(i as usize - 1)
                .map(|&r| self.world.label(r).into())
                .unwrap_or_default(),
            _ => String::new(),
        }
    }

    /// A true fact about the current entity stated in `text`.
    fn advance_from(&mut self, text_body: &str) -> bool {
        let words = text::tokens(text_body);
        let w = self.world;
        let found = words.windows(3).find_map(|win| {
            let s = w.entity_by_name(&win[0])?;
            let r = w.label_by_name(&win[1])?;
            let o = w.entity_by_name(&win[2])?;
            (s == self.known && w.object(s, r) == Some(o)).then_some(Triple { subject: s, relation: r, object: o })
        });
        match found {
            Some(t) => {
                self.known = t.object;
                self.resolved = self.resolved.saturating_add(1);
                true
            }
            None => false,
        }
    }

    /// Runs the call and returns (rendered call, tool response text).
    fn execute(&mut self, call: &ToolCall) -> (String, String) {
        match call {
            ToolCall::WebSearch { query } => {
                let words: Vec<String> = query.iter().map(|&s| self.word(s)).collect();
                let q = words.join(" ");
                let out = web_search(self.world, &mut self.cache, &[q.as_str()], self.top_k);
                match &out[0].1 {
                    SearchResponse::Results(rs) => {
                        self.results = rs.clone();
                        let top = rs.first().map(|r| r.snippet.clone()).unwrap_or_default();
                        self.last =
                            if self.advance_from(&top) { ResponseClass::SearchHit } else { ResponseClass::SearchMiss };
                    }
                    SearchResponse::Error(_) => {
                        self.results.clear();
                        self.last = ResponseClass::Error;
                    }
                }
                self.last_query = q.clone();
                (
                    format!("{{\"name\": \"web_search\", \"arguments\": {{\"query\": [\"{}\"]}}}}", json_escape(&q)),
                    render_search(&out),
                )
            }
            ToolCall::BrowseWebpage { url_list } => {
                let urls: Vec<String> = url_list
                    .iter()
                    .map(|&r| self.results.get(r as usize).map(|x| x.url.clone()).unwrap_or_default())
                    .collect();
                let entries = web_browse(self.world, &self.cache, &urls, &self.last_query);
                let body = render_browse(&entries);
                self.last =
                    if self.advance_from(&body) { ResponseClass::BrowseFound } else { ResponseClass::BrowseMiss };
                let list: Vec<String> = urls.iter().map(|u| format!("\"{}\"", json_escape(u))).collect();
                (
                    format!("{{\"name\": \"browse_webpage\", \"arguments\": {{\"url_list\": [{}]}}}}", list.join(", ")),
                    body,
                )
            }
        }
    }
}

fn json_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            c if (c as u32) < 0x20 => out.push_str(&format!("\\u{:04x}", c as u32)),
            c => out.push(c),
        }
    }
    out
}

const ITEM_PHRASES: [[&str; 3]; 3] = [
    ["search for the next link", "look up the next relation", "query the web for the next fact"],
    ["open the best result", "read the top page", "browse the page for details"],
    ["give the final answer", "report the entity found", "answer the question"],
];

fn render_plan(action: &[ActionToken]) -> String {
    let mut lines = Vec::new();
    for t in action {
        if let ActionToken::Arg(Symbol::Item(k, v)) = t {
            lines.push(format!("{}. {}", lines.len() + 1, ITEM_PHRASES[k.index()][*v as usize]));
        }
    }
    lines.join("\n")
}

fn choose<R: Rng + ?Sized>(probs: &[f64], mask: Mask, decoding: Decoding, rng: &mut R) -> usize {
    let legal = super::context::legal_tokens(mask);
    match decoding {
        Decoding::Greedy => {
            let mut best: Option<usize> = None;
            for i in legal {
                if best.map(|b| probs[i] > probs[b]).unwrap_or(true) {
                    best = Some(i);
                }
            }
            best.expect("mask is nonempty")
        }
        Decoding::Sample => {
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut last = 0;
            for i in legal {
                acc += probs[i];
                last = i;
                if u < acc {
                    return i;
                }
            }
            // rounding left u past the final cumulative sum
            last
        }
    }
}

/// Runs one episode. The returned rollout carries behavior-policy log-probs
/// and entropies, stage labels and a zero reward (scoring is separate).
/// A rollout that hits the step cap ends without an answer.
pub fn sample_rollout<R: Rng + ?Sized>(
    params: &PolicyParams,
    world: &KnowledgeWorld,
    query: &Query,
    rng: &mut R,
    limits: Limits,
    top_k: usize,
    decoding: Decoding,
) -> Result<Rollout, PolicyError> {
    limits.validate()?;
    let mut h = Harness::new(world, query, top_k);
    let mut plan: Vec<ItemKind> = Vec::new();
    let mut plan_base = 0u8;
    let mut steps = Vec::new();
    let mut stats = TokenStats::default();
    for index in 0..limits.max_steps {
        let obs = h.observation();
        let mut dec = StepDecoder::new(obs, index, cursor_item(&plan, plan_base, obs.resolved), limits);
        let (mut think, mut action) = (Vec::new(), Vec::new());
        while let Some((ctx, mask)) = dec.next() {
            let dist = next_distribution(params, ctx, mask)?;
            let i = choose(&dist.probs, mask, decoding, rng);
            let t = ActionToken::from_index(i).expect("legal index");
            stats.push(libm::log(dist.probs[i]), dist.entropy, crate::trajectory::Stage::OtherThink);
            match dec.segment() {
                super::context::Segment::Think => think.push(t),
                super::context::Segment::Action => action.push(t),
            }
            dec.push(t)?;
        }
        let kind = dec.action_kind().expect("a finished step has an action");
        let (content, tool_response) = match kind {
            ActionKind::Plan => {
                plan = plan_items(&action);
                plan_base = obs.resolved;
                (render_plan(&action), None)
            }
            ActionKind::ToolCall => {
                let call = parse_tool_call(&action).expect("decoder emits schema-valid calls");
                let (c, resp) = h.execute(&call);
                (c, Some(resp))
            }
            ActionKind::Answer => {
                let slot = match action[1] {
                    ActionToken::Arg(Symbol::Entity(s)) => s,
                    _ => EntitySlot::Known,
                };
                (world.entity_name(h.entity(slot)).into(), None)
            }
        };
        steps.push(Step { index: index as u32, observation: obs, think, action_kind: kind, action, content, tool_response });
        if kind == ActionKind::Answer {
            break;
        }
    }
    let rollout = Rollout { query_id: query.query_id, steps, reward: 0.0, per_token: stats };
    label_stages(rollout).map_err(PolicyError::Trajectory)
}

/// One replayed token: its bucket, legal mask and identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenContext {
    pub context: Context,
    pub mask: Mask,
    pub token: ActionToken,
}

/// Reconstructs the decoder context of every token of a logged rollout
/// without the world: observations are stored per step and the plan cursor
/// is recomputed from earlier plan steps.
pub fn replay(rollout: &Rollout, limits: Limits) -> Result<Vec<TokenContext>, PolicyError> {
    let mut out = Vec::with_capacity(rollout.token_count());
    let mut plan: Vec<ItemKind> = Vec::new();
    let mut plan_base = 0u8;
    for (index, step) in rollout.steps.iter().enumerate() {
        let obs = step.observation;
        let mut dec = StepDecoder::new(obs, index, cursor_item(&plan, plan_base, obs.resolved), limits);
        for t in step.tokens() {
            let (context, mask) = dec.next().ok_or(PolicyError::Replay { step: index, reason: "extra tokens" })?;
            dec.push(t).map_err(|_| PolicyError::Replay { step: index, reason: "illegal token" })?;
            out.push(TokenContext { context, mask, token: t });
        }
        if !dec.done() {
            return Err(PolicyError::Replay { step: index, reason: "step ends early" });
        }
        if dec.action_kind() != Some(step.action_kind) {
            return Err(PolicyError::Replay { step: index, reason: "action kind mismatch" });
        }
        if step.action_kind == ActionKind::Plan {
            plan = plan_items(&step.action);
            plan_base = obs.resolved;
        }
    }
    Ok(out)
}
