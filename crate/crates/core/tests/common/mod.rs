#![allow(dead_code)]

use planshape_core::policy::{replay, sample_rollout, Decoding, Limits, PolicyParams};
use planshape_core::reward::{score, NormalizedExactMatch};
use planshape_core::shaping::{RolloutAdvantages, ShapedAdvantages};
use planshape_core::trajectory::{Rollout, RolloutGroup, VOCAB_SIZE};
use planshape_core::world::{generate_world, sample_queries, KnowledgeWorld, Query, DEFAULT_TOP_K};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn small_world() -> (KnowledgeWorld, Vec<Query>) {
    let w = generate_world(3, 16, 3, 1..=2).unwrap();
    let q = sample_queries(&w, 12, 5).unwrap();
    (w, q)
}

/// G scored rollouts of one query under `params`.
pub fn group(params: &PolicyParams, world: &KnowledgeWorld, q: &Query, g: usize, seed: u64) -> RolloutGroup {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rollouts: Vec<Rollout> = (0..g)
        .map(|_| {
            let mut r =
                sample_rollout(params, world, q, &mut rng, Limits::default(), DEFAULT_TOP_K, Decoding::Sample).unwrap();
            r.reward = score(&r, q, &NormalizedExactMatch).total;
            r
        })
        .collect();
    RolloutGroup::new(q.query_id, rollouts).unwrap()
}

/// Arbitrary per-token advantages in [-2, 2].
pub fn random_advantages(group: &RolloutGroup, rng: &mut impl Rng) -> ShapedAdvantages {
    ShapedAdvantages {
        rollouts: group
            .rollouts
            .iter()
            .map(|r| {
                let n = r.response_len();
                let a: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
                RolloutAdvantages {
                    base: 0.0,
                    sau_scaled: 0.0,
                    sau_selected: false,
                    psi: vec![0.0; n],
                    eas_clipped: vec![false; n],
                    final_a: a,
                }
            })
            .collect(),
    }
}

/// Per-token (row, legal columns, chosen column, behavior log-prob, A) of a
/// group, read straight off the replayed contexts.
pub struct Token {
    pub row: usize,
    pub legal: Vec<usize>,
    pub chosen: usize,
    pub logp_old: f64,
    pub adv: f64,
}

pub fn tokens(group: &RolloutGroup, shaped: &ShapedAdvantages) -> Vec<Token> {
    let mut out = Vec::new();
    for (r, a) in group.rollouts.iter().zip(&shaped.rollouts) {
        let ctx = replay(r, Limits::default()).unwrap();
        for (j, c) in ctx.iter().enumerate() {
            out.push(Token {
                row: c.context.index(),
                legal: (0..VOCAB_SIZE).filter(|i| c.mask >> i & 1 == 1).collect(),
                chosen: c.token.index(),
                logp_old: r.per_token.logprob[j],
                adv: a.final_a[j],
            });
        }
    }
    out
}

/// Log-probability of `t.chosen` under `logits`, computed directly.
pub fn log_prob(logits: &[f64], t: &Token) -> f64 {
    let row = &logits[t.row * VOCAB_SIZE..(t.row + 1) * VOCAB_SIZE];
    let z: f64 = t.legal.iter().map(|&i| row[i].exp()).sum();
    row[t.chosen] - z.ln()
}

/// Clipped surrogate (plus the optional KL estimate), written out from the
/// definition with no shared code.
pub fn objective(logits: &[f64], toks: &[Token], eps: f64, beta: f64) -> f64 {
    let n = toks.len() as f64;
    toks.iter()
        .map(|t| {
            let lp = log_prob(logits, t);
            let r = (lp - t.logp_old).exp();
            let surr = (r * t.adv).min(r.clamp(1.0 - eps, 1.0 + eps) * t.adv);
            surr - beta * (t.logp_old - lp)
        })
        .sum::<f64>()
        / n
}

/// Distance of the nearest ratio to a clip boundary.
pub fn kink_distance(logits: &[f64], toks: &[Token], eps: f64) -> f64 {
    toks.iter()
        .map(|t| {
            let r = (log_prob(logits, t) - t.logp_old).exp();
            (r - (1.0 - eps)).abs().min((r - (1.0 + eps)).abs())
        })
        .fold(f64::INFINITY, f64::min)
}
