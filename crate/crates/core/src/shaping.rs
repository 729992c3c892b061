//! Group-relative advantages and the two shaping rules: selective
//! upweighting of efficient correct rollouts (SAU) and an entropy bonus
//! clamped by the advantage magnitude (EAS).

use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::trajectory::{Rollout, RolloutGroup};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ShapingConfig {
    /// Entropy coefficient α.
    pub alpha: f64,
    /// Clip factor κ: the bonus never exceeds |A|/κ.
    pub kappa: f64,
    /// Upweighting factor λ for selected rollouts.
    pub lambda: f64,
    /// Minimum tool calls a selected rollout must make.
    pub complexity_c: usize,
    pub enable_eas: bool,
    pub enable_sau: bool,
}

impl Default for ShapingConfig {
    fn default() -> Self {
        Self { alpha: 0.1, kappa: 2.0, lambda: 2.0, complexity_c: 2, enable_eas: true, enable_sau: true }
    }
}

impl ShapingConfig {
    pub fn vanilla() -> Self {
        Self { enable_eas: false, enable_sau: false, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), ShapingError> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(ShapingError::Config("alpha must be finite and non-negative"));
        }
        if !(self.kappa > 1.0 && self.kappa.is_finite()) {
            return Err(ShapingError::Config("kappa must be finite and greater than 1"));
        }
        if !(self.lambda >= 1.0 && self.lambda.is_finite()) {
            return Err(ShapingError::Config("lambda must be finite and at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ShapingError {
    #[error("a group needs at least 2 rollouts, got {0}")]
    GroupTooSmall(usize),
    #[error("{what}: expected {expected}, found {found}")]
    Misaligned { what: &'static str, expected: usize, found: usize },
    #[error("invalid shaping configuration: {0}")]
    Config(&'static str),
}

/// `(r_i - mean) / std` with the population std; all zeros when the rewards
/// are all equal.
pub fn group_advantage(rewards: &[f64]) -> Result<Vec<f64>, ShapingError> {
    let g = rewards.len();
    if g < 2 {
        return Err(ShapingError::GroupTooSmall(g));
    }
    let first = rewards[0];
    if rewards.iter().all(|&r| r == first) {
        return Ok(vec![0.0; g]);
    }
    let mean = rewards.iter().sum::<f64>() / g as f64;
    let var = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / g as f64;
    let std = libm::sqrt(var);
    Ok(rewards.iter().map(|r| (r - mean) / std).collect())
}

pub fn tool_call_count(rollout: &Rollout) -> usize {
    rollout.tool_calls()
}

/// Indices of the rollouts with reward 1.0 and the fewest tool calls among
/// them, provided that minimum is at least `c`.
pub fn select_by_counts(rewards: &[f64], tool_calls: &[usize], c: usize) -> Vec<usize> {
    let correct = || (0..rewards.len()).filter(|&i| rewards[i] == 1.0);
    let Some(m) = correct().map(|i| tool_calls[i]).min() else {
        return Vec::new();
    };
    if m < c {
        return Vec::new();
    }
    correct().filter(|&i| tool_calls[i] == m).collect()
}

pub fn select_sau(group: &RolloutGroup, rewards: &[f64], cfg: &ShapingConfig) -> Result<Vec<usize>, ShapingError> {
    if rewards.len() != group.len() {
        return Err(ShapingError::Misaligned { what: "rewards", expected: group.len(), found: rewards.len() });
    }
    let counts: Vec<usize> = group.rollouts.iter().map(tool_call_count).collect();
    Ok(select_by_counts(rewards, &counts, cfg.complexity_c))
}

/// Multiplies the selected entries by λ.
pub fn apply_sau(advantages: &[f64], selected: &[usize], lambda: f64) -> Vec<f64> {
    let mut out = advantages.to_vec();
    for &i in selected {
        out[i] *= lambda;
    }
    out
}

/// `min(α·H, |A|/κ)`.
pub fn eas_term(entropy: f64, advantage: f64, alpha: f64, kappa: f64) -> f64 {
    (alpha * entropy).min(advantage.abs() / kappa)
}

/// Shaped advantages of one rollout. `psi`, `eas_clipped` and `final_a` run
/// over its loss-masked tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutAdvantages {
    pub base: f64,
    pub sau_scaled: f64,
    pub sau_selected: bool,
    pub psi: Vec<f64>,
    /// The |A|/κ bound, not α·H, set ψ.
    pub eas_clipped: Vec<bool>,
    pub final_a: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapedAdvantages {
    pub rollouts: Vec<RolloutAdvantages>,
}

impl ShapedAdvantages {
    pub fn selected(&self) -> impl Iterator<Item = usize> + '_ {
        self.rollouts.iter().enumerate().filter(|(_, r)| r.sau_selected).map(|(i, _)| i)
    }
}

/// Full pipeline: group advantage broadcast to tokens, λ on selected
/// rollouts, then ψ from the post-upweighting magnitude added on top.
/// `entropies[i]` holds the sampling-time entropies of rollout `i`'s
/// loss-masked tokens.
pub fn shape(
    group: &RolloutGroup,
    rewards: &[f64],
    entropies: &[Vec<f64>],
    cfg: &ShapingConfig,
) -> Result<ShapedAdvantages, ShapingError> {
    cfg.validate()?;
    if entropies.len() != group.len() {
        return Err(ShapingError::Misaligned { what: "entropy rows", expected: group.len(), found: entropies.len() });
    }
    for (r, h) in group.rollouts.iter().zip(entropies) {
        if h.len() != r.response_len() {
            return Err(ShapingError::Misaligned { what: "entropies", expected: r.response_len(), found: h.len() });
        }
    }
    let base = group_advantage(rewards)?;
    let selected = if cfg.enable_sau { select_sau(group, rewards, cfg)? } else { Vec::new() };
    let scaled = if cfg.enable_sau { apply_sau(&base, &selected, cfg.lambda) } else { base.clone() };
    let rollouts = (0..group.len())
        .map(|i| {
            let a = scaled[i];
            let h = &entropies[i];
            let (psi, eas_clipped, final_a) = if cfg.enable_eas {
                let psi: Vec<f64> = h.iter().map(|&h| eas_term(h, a, cfg.alpha, cfg.kappa)).collect();
                let clipped = h.iter().map(|&h| a.abs() / cfg.kappa < cfg.alpha * h).collect();
                let fin = psi.iter().map(|p| a + p).collect();
                (psi, clipped, fin)
            } else {
                (vec![0.0; h.len()], vec![false; h.len()], vec![a; h.len()])
            };
            RolloutAdvantages {
                base: base[i],
                sau_scaled: a,
                sau_selected: selected.contains(&i),
                psi,
                eas_clipped,
                final_a,
            }
        })
        .collect();
    Ok(ShapedAdvantages { rollouts })
}

/// Entropy columns of a group restricted to loss-masked tokens.
pub fn masked_entropies(group: &RolloutGroup) -> Vec<Vec<f64>> {
    group
        .rollouts
        .iter()
        .map(|r| {
            r.per_token.entropy.iter().zip(&r.per_token.mask).filter(|(_, &m)| m).map(|(&h, _)| h).collect()
        })
        .collect()
}

/// Shapes a group from the rewards and entropies stored on its rollouts.
pub fn shape_group(group: &RolloutGroup, cfg: &ShapingConfig) -> Result<ShapedAdvantages, ShapingError> {
    shape(group, &group.rewards(), &masked_entropies(group), cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::fixtures::*;
    use crate::trajectory::{ActionKind, ItemKind, Step};

    fn with_calls(n: usize, reward: f64) -> Rollout {
        let mut steps: Vec<Step> = vec![plan_step(0, &[ItemKind::Search])];
        for i in 0..n {
            steps.push(search_step(i as u32 + 1));
        }
        steps.push(answer_step(n as u32 + 1, "x"));
        let mut r = rollout(steps);
        r.reward = reward;
        r
    }

    #[test]
    fn two_point_standardization() {
        assert_eq!(group_advantage(&[1.0, 0.0]).unwrap(), vec![1.0, -1.0]);
        assert_eq!(group_advantage(&[0.5; 4]).unwrap(), vec![0.0; 4]);
        assert_eq!(group_advantage(&[1.0]), Err(ShapingError::GroupTooSmall(1)));
    }

    #[test]
    fn hand_computed_eight_way() {
        let a = group_advantage(&[1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let std = libm::sqrt(0.1875);
        assert!((a[0] - 0.75 / std).abs() < 1e-12);
        assert!((a[7] + 0.25 / std).abs() < 1e-12);
    }

    #[test]
    fn tool_counts() {
        assert_eq!(tool_call_count(&rollout(vec![plan_step(0, &[ItemKind::Search]), search_step(1), browse_step(2), answer_step(3, "x")])), 2);
        assert_eq!(tool_call_count(&rollout(vec![plan_step(0, &[ItemKind::Answer]), answer_step(1, "x")])), 0);
        let mut steps = vec![plan_step(0, &[ItemKind::Search])];
        steps.extend((1..8).map(search_step));
        let truncated = rollout(steps);
        assert!(truncated.steps.iter().all(|s| s.action_kind != ActionKind::Answer));
        assert_eq!(tool_call_count(&truncated), 7);
    }

    #[test]
    fn selection_examples() {
        assert_eq!(select_by_counts(&[1.0, 1.0, 0.5], &[3, 5, 2], 2), vec![0]);
        assert_eq!(select_by_counts(&[1.0, 1.0], &[1, 4], 2), Vec::<usize>::new());
        assert_eq!(select_by_counts(&[0.5, 0.0], &[3, 2], 2), Vec::<usize>::new());
        let g = RolloutGroup::new(0, vec![with_calls(3, 1.0), with_calls(5, 1.0), with_calls(2, 0.5)]).unwrap();
        assert_eq!(select_sau(&g, &g.rewards(), &ShapingConfig::default()).unwrap(), vec![0]);
    }

    #[test]
    fn sau_examples() {
        assert_eq!(apply_sau(&[1.0, -1.0], &[0], 2.0), vec![2.0, -1.0]);
        assert_eq!(apply_sau(&[1.0, -1.0], &[], 2.0), vec![1.0, -1.0]);
        assert_eq!(apply_sau(&[0.0], &[0], 2.0), vec![0.0]);
    }

    #[test]
    fn eas_examples() {
        let psi = eas_term(10.0, -1.0, 0.1, 2.0);
        assert_eq!(psi, 0.5);
        assert_eq!(-1.0 + psi, -0.5);
        assert_eq!(eas_term(0.0, 3.0, 0.1, 2.0), 0.0);
        assert_eq!(eas_term(7.0, 0.0, 0.1, 2.0), 0.0);
    }

    #[test]
    fn composed_pipeline() {
        let g = RolloutGroup::new(0, vec![with_calls(2, 1.0), with_calls(2, 0.0)]).unwrap();
        let h: Vec<Vec<f64>> = g.rollouts.iter().map(|r| vec![0.0; r.response_len()]).collect();
        let cfg = ShapingConfig::default();
        let s = shape(&g, &[1.0, 0.0], &h, &cfg).unwrap();
        assert!(s.rollouts[0].final_a.iter().all(|&a| a == 2.0));
        assert!(s.rollouts[1].final_a.iter().all(|&a| a == -1.0));
        assert_eq!(s.selected().collect::<Vec<_>>(), vec![0]);

        let v = shape(&g, &[1.0, 0.0], &h, &ShapingConfig::vanilla()).unwrap();
        assert!(v.rollouts[0].final_a.iter().all(|&a| a == 1.0));
    }

    #[test]
    fn misaligned_entropies_are_rejected() {
        let g = RolloutGroup::new(0, vec![with_calls(2, 1.0), with_calls(2, 0.0)]).unwrap();
        let h = vec![vec![0.0; 3], vec![0.0; 3]];
        assert!(matches!(shape(&g, &[1.0, 0.0], &h, &ShapingConfig::default()), Err(ShapingError::Misaligned { .. })));
    }
}
