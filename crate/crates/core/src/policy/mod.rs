//! Tabular categorical policy over the action vocabulary: one logit row per
//! feature bucket, grammar-masked softmax, and the exact gradient of the
//! clipped token-level surrogate.

mod agent;
mod context;

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use thiserror::Error;

use crate::shaping::ShapedAdvantages;
use crate::trajectory::{ActionToken, RolloutGroup, TrajectoryError, VOCAB_SIZE};

pub use agent::{replay, sample_rollout, Decoding, TokenContext};
pub use context::{
    cursor_item, legal_tokens, mask_contains, mask_of, plan_items, Context, Limits, Mask, Segment, StepDecoder,
    N_CONTEXTS,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PolicyError {
    #[error("grammar mask admits no token")]
    EmptyMask,
    #[error("token {0} is not legal here")]
    IllegalToken(ActionToken),
    #[error("cannot replay step {step}: {reason}")]
    Replay { step: usize, reason: &'static str },
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error("rollout {rollout} has {tokens} loss-masked tokens but {advantages} advantages")]
    Misaligned { rollout: usize, tokens: usize, advantages: usize },
    #[error("non-finite {what} at parameter {index}")]
    NonFinite { what: &'static str, index: usize },
    #[error("parameter table has {found} entries, expected {expected}")]
    Shape { expected: usize, found: usize },
    #[error("invalid policy configuration: {0}")]
    Config(&'static str),
}

/// The logit table, `N_CONTEXTS` rows by `VOCAB_SIZE` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    logits: Vec<f64>,
}

impl PolicyParams {
    pub const LEN: usize = N_CONTEXTS * VOCAB_SIZE;

    pub fn zeros() -> Self {
        Self { logits: vec![0.0; Self::LEN] }
    }

    /// Logits drawn i.i.d. uniform in `[-init_scale, init_scale]`.
    pub fn init(seed: u64, init_scale: f64) -> Result<Self, PolicyError> {
        if !(init_scale >= 0.0 && init_scale.is_finite()) {
            return Err(PolicyError::Config("init_scale must be finite and non-negative"));
        }
        if init_scale == 0.0 {
            return Ok(Self::zeros());
        }
        let mut rng = crate::rng::stream(seed, &[0x0070_6f6c_6963_79]);
        let logits = (0..Self::LEN).map(|_| rng.gen_range(-init_scale..=init_scale)).collect();
        Ok(Self { logits })
    }

    pub fn from_logits(logits: Vec<f64>) -> Result<Self, PolicyError> {
        if logits.len() != Self::LEN {
            return Err(PolicyError::Shape { expected: Self::LEN, found: logits.len() });
        }
        if let Some(index) = logits.iter().position(|x| !x.is_finite()) {
            return Err(PolicyError::NonFinite { what: "logit", index });
        }
        Ok(Self { logits })
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    /// Mutable access for perturbation tests and checkpoint loading.
    pub fn logits_mut(&mut self) -> &mut [f64] {
        &mut self.logits
    }

    pub fn row(&self, context: Context) -> &[f64] {
        let i = context.index() * VOCAB_SIZE;
        &self.logits[i..i + VOCAB_SIZE]
    }

    pub fn into_logits(self) -> Vec<f64> {
        self.logits
    }
}

/// Shorthand for [`PolicyParams::init`].
pub fn init_params(seed: u64, init_scale: f64) -> Result<PolicyParams, PolicyError> {
    PolicyParams::init(seed, init_scale)
}

/// Masked next-token distribution. Illegal tokens have probability 0.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenDistribution {
    pub probs: [f64; VOCAB_SIZE],
    pub mask: Mask,
    /// Nats, over the legal support.
    pub entropy: f64,
}

pub fn next_distribution(params: &PolicyParams, context: Context, mask: Mask) -> Result<TokenDistribution, PolicyError> {
    if mask == 0 {
        return Err(PolicyError::EmptyMask);
    }
    let row = params.row(context);
    let max = legal_tokens(mask).map(|i| row[i]).fold(f64::NEG_INFINITY, f64::max);
    let mut probs = [0.0; VOCAB_SIZE];
    let mut z = 0.0;
    for i in legal_tokens(mask) {
        probs[i] = libm::exp(row[i] - max);
        z += probs[i];
    }
    let mut entropy = 0.0;
    for i in legal_tokens(mask) {
        probs[i] /= z;
        if probs[i] > 0.0 {
            entropy -= probs[i] * libm::log(probs[i]);
        }
    }
    Ok(TokenDistribution { probs, mask, entropy: entropy.max(0.0) })
}

/// Gradient of the surrogate with respect to every logit, plus its value.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateGrad {
    pub grads: Vec<f64>,
    pub objective_value: f64,
}

impl SurrogateGrad {
    pub fn zeros() -> Self {
        Self { grads: vec![0.0; PolicyParams::LEN], objective_value: 0.0 }
    }

    pub fn add_scaled(&mut self, other: &SurrogateGrad, w: f64) {
        for (g, o) in self.grads.iter_mut().zip(&other.grads) {
            *g += w * o;
        }
        self.objective_value += w * other.objective_value;
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(self.grads.iter().map(|g| g * g).sum())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Term {
    context: Context,
    mask: Mask,
    token: usize,
    logp_old: f64,
    advantage: f64,
}

/// A group's loss-masked tokens paired with their behavior log-probs and
/// shaped advantages, ready for repeated evaluation at new parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedGroup {
    terms: Vec<Term>,
    n_tokens: usize,
}

impl PreparedGroup {
    pub fn new(group: &RolloutGroup, shaped: &ShapedAdvantages, limits: Limits) -> Result<Self, PolicyError> {
        if shaped.rollouts.len() != group.len() {
            return Err(PolicyError::Misaligned { rollout: group.len(), tokens: group.len(), advantages: shaped.rollouts.len() });
        }
        let mut terms = Vec::new();
        for (i, (r, adv)) in group.rollouts.iter().zip(&shaped.rollouts).enumerate() {
            let contexts = replay(r, limits)?;
            let masked = r.response_len();
            if adv.final_a.len() != masked || contexts.len() != r.per_token.len() {
                return Err(PolicyError::Misaligned { rollout: i, tokens: masked, advantages: adv.final_a.len() });
            }
            let mut k = 0;
            for (j, tc) in contexts.iter().enumerate() {
                if !r.per_token.mask[j] {
                    continue;
                }
                terms.push(Term {
                    context: tc.context,
                    mask: tc.mask,
                    token: tc.token.index(),
                    logp_old: r.per_token.logprob[j],
                    advantage: adv.final_a[k],
                });
                k += 1;
            }
        }
        Ok(Self { n_tokens: terms.len(), terms })
    }

    pub fn n_tokens(&self) -> usize {
        self.n_tokens
    }

    /// `(1/N) Σ min(r·A, clip(r, 1-ε, 1+ε)·A) − β·KL` and its gradient, with
    /// the advantages held constant and KL the per-token estimate of
    /// KL(π_old ‖ π_θ), `log π_old − log π_θ`, included only when `β > 0`.
    pub fn evaluate(&self, params: &PolicyParams, clip_eps: f64, kl_beta: f64) -> Result<SurrogateGrad, PolicyError> {
        if !(clip_eps > 0.0 && clip_eps < 1.0) {
            return Err(PolicyError::Config("clip_eps must lie in (0, 1)"));
        }
        let mut out = SurrogateGrad::zeros();
        if self.n_tokens == 0 {
            return Ok(out);
        }
        let inv_n = 1.0 / self.n_tokens as f64;
        for t in &self.terms {
            let dist = next_distribution(params, t.context, t.mask)?;
            let logp = libm::log(dist.probs[t.token]);
            let ratio = libm::exp(logp - t.logp_old);
            let a = t.advantage;
            let unclipped = ratio * a;
            let clipped = ratio.clamp(1.0 - clip_eps, 1.0 + clip_eps) * a;
            // d(min)/dθ follows the selected branch; the clipped one is flat
            let mut coef = if unclipped <= clipped { a * ratio } else { 0.0 };
            out.objective_value += unclipped.min(clipped) * inv_n;
            if kl_beta > 0.0 {
                out.objective_value -= kl_beta * (t.logp_old - logp) * inv_n;
                coef += kl_beta;
            }
            if coef == 0.0 {
                continue;
            }
            let base = t.context.index() * VOCAB_SIZE;
            for j in legal_tokens(t.mask) {
                let ind = if j == t.token { 1.0 } else { 0.0 };
                out.grads[base + j] += coef * inv_n * (ind - dist.probs[j]);
            }
        }
        Ok(out)
    }
}

/// Surrogate value and analytic gradient for one group.
pub fn surrogate_gradient(
    params: &PolicyParams,
    group: &RolloutGroup,
    shaped: &ShapedAdvantages,
    clip_eps: f64,
    kl_beta: f64,
    limits: Limits,
) -> Result<SurrogateGrad, PolicyError> {
    PreparedGroup::new(group, shaped, limits)?.evaluate(params, clip_eps, kl_beta)
}

/// Gradient ascent step `θ + lr·g`, with `g` rescaled to `max_grad_norm`
/// when its norm exceeds it.
pub fn apply_update(
    params: &PolicyParams,
    grad: &SurrogateGrad,
    learning_rate: f64,
    max_grad_norm: Option<f64>,
) -> Result<PolicyParams, PolicyError> {
    if let Some(index) = grad.grads.iter().position(|g| !g.is_finite()) {
        return Err(PolicyError::NonFinite { what: "gradient", index });
    }
    if grad.grads.len() != PolicyParams::LEN {
        return Err(PolicyError::Shape { expected: PolicyParams::LEN, found: grad.grads.len() });
    }
    if !(learning_rate >= 0.0 && learning_rate.is_finite()) {
        return Err(PolicyError::Config("learning rate must be finite and non-negative"));
    }
    let mut scale = learning_rate;
    if let Some(max) = max_grad_norm {
        let n = grad.norm();
        if n > max && n > 0.0 {
            scale *= max / n;
        }
    }
    let logits: Vec<f64> = params.logits.iter().zip(&grad.grads).map(|(p, g)| p + scale * g).collect();
    if let Some(index) = logits.iter().position(|x| !x.is_finite()) {
        return Err(PolicyError::NonFinite { what: "updated logit", index });
    }
    Ok(PolicyParams { logits })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::{Symbol, EntitySlot};

    fn two() -> Mask {
        mask_of([ActionToken::Arg(Symbol::Entity(EntitySlot::Known)), ActionToken::Arg(Symbol::Entity(EntitySlot::Start))])
    }

    #[test]
    fn uniform_init_gives_log_support_entropy() {
        let p = init_params(1, 0.0).unwrap();
        let m = mask_of([ActionToken::Plan, ActionToken::Search, ActionToken::Answer]);
        let d = next_distribution(&p, Context::Action { item: None, last: Default::default() }, m).unwrap();
        assert!((d.entropy - libm::log(3.0)).abs() < 1e-12);
        assert_eq!(d.probs[ActionToken::Browse.index()], 0.0);
    }

    #[test]
    fn equal_logits_split_evenly() {
        let p = PolicyParams::zeros();
        let d = next_distribution(&p, Context::AnswerEntity, two()).unwrap();
        let k = ActionToken::Arg(Symbol::Entity(EntitySlot::Known)).index();
        assert_eq!(d.probs[k], 0.5);
        assert!((d.entropy - core::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn softmax_of_one_and_zero() {
        let mut p = PolicyParams::zeros();
        let k = ActionToken::Arg(Symbol::Entity(EntitySlot::Known)).index();
        p.logits_mut()[Context::AnswerEntity.index() * VOCAB_SIZE + k] = 1.0;
        let d = next_distribution(&p, Context::AnswerEntity, two()).unwrap();
        let e = core::f64::consts::E;
        assert!((d.probs[k] - e / (e + 1.0)).abs() < 1e-15);
        let s = ActionToken::Arg(Symbol::Entity(EntitySlot::Start)).index();
        assert!((d.probs[s] - 1.0 / (e + 1.0)).abs() < 1e-15);
    }

    #[test]
    fn empty_mask_is_an_error() {
        assert_eq!(next_distribution(&PolicyParams::zeros(), Context::Forced, 0), Err(PolicyError::EmptyMask));
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let a = init_params(3, 0.1).unwrap();
        assert_eq!(a, init_params(3, 0.1).unwrap());
        assert!(a.logits().iter().all(|x| x.is_finite() && x.abs() <= 0.1));
        assert!(init_params(3, -1.0).is_err());
    }

    #[test]
    fn update_rejects_non_finite_and_respects_zero() {
        let p = init_params(3, 0.1).unwrap();
        let mut g = SurrogateGrad::zeros();
        assert_eq!(apply_update(&p, &g, 0.7, None).unwrap(), p);
        g.grads[4] = 1.0;
        assert_eq!(apply_update(&p, &g, 0.0, None).unwrap(), p);
        g.grads[5] = f64::NAN;
        assert!(matches!(apply_update(&p, &g, 0.1, None), Err(PolicyError::NonFinite { index: 5, .. })));
    }

    #[test]
    fn norm_clip_bounds_the_step() {
        let p = PolicyParams::zeros();
        let mut g = SurrogateGrad::zeros();
        g.grads[0] = 3.0;
        g.grads[1] = 4.0;
        let q = apply_update(&p, &g, 1.0, Some(1.0)).unwrap();
        assert!((q.logits()[0] - 0.6).abs() < 1e-15 && (q.logits()[1] - 0.8).abs() < 1e-15);
    }
}
