//! Learning signals handed to Q-learners after each episode.
//!
//! * Difference: the agent's marginal contribution to cleared volume, with
//!   the counterfactual scoped to its own pair and the partner's offer
//!   held fixed. A zero offer never clears, so this collapses to `q`.
//! * Local: `2q - a_i`, minus a small penalty when the agent meets the same
//!   partner as in the previous episode.
//! * Global: total cleared volume across the whole market this episode.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::game::{clear, ClearingRule, Offer, TradeOutcome};

/// Default penalty for meeting last episode's partner again.
pub const REPEAT_PARTNER_PENALTY: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardMode {
    Difference,
    Local,
    Global,
}

impl RewardMode {
    pub const ALL: [RewardMode; 3] = [RewardMode::Difference, RewardMode::Local, RewardMode::Global];

    pub fn label(self) -> &'static str {
        match self {
            RewardMode::Difference => "diff",
            RewardMode::Local => "local",
            RewardMode::Global => "global",
        }
    }
}

impl fmt::Display for RewardMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for RewardMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "diff" | "difference" => Ok(RewardMode::Difference),
            "local" => Ok(RewardMode::Local),
            "global" => Ok(RewardMode::Global),
            other => Err(format!("unknown reward mode `{other}`")),
        }
    }
}

/// Everything a paired learner's reward can depend on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardContext {
    pub rule: ClearingRule,
    /// The agent's own pair, with the agent in the `offer_i` slot.
    pub outcome: TradeOutcome,
    pub episode_total: u64,
    pub repeated_partner: bool,
}

impl RewardContext {
    pub fn own_offer(&self) -> Offer {
        self.outcome.offer_i
    }

    pub fn partner_offer(&self) -> Offer {
        self.outcome.offer_j
    }
}

/// `G(z) - G(z^{-i})` restricted to the agent's pair: what cleared minus
/// what would have cleared had the agent offered nothing.
pub fn difference_reward(rule: ClearingRule, a_i: Offer, a_j: Offer) -> f64 {
    let with = clear(rule, a_i, a_j).quantity;
    let without = clear(rule, Offer(0), a_j).quantity;
    f64::from(with) - f64::from(without)
}

pub fn local_reward(q: u32, a_i: Offer, repeated_partner: bool, penalty: f64) -> f64 {
    debug_assert!(q <= a_i.0, "cleared {q} above own offer {}", a_i.0);
    let pi = if repeated_partner { penalty } else { 0.0 };
    2.0 * f64::from(q) - f64::from(a_i.0) - pi
}

pub fn global_reward(episode_total: u64) -> f64 {
    episode_total as f64
}

/// Reward for one paired learner.
pub fn reward(mode: RewardMode, ctx: &RewardContext, repeat_penalty: f64) -> f64 {
    debug_assert!(ctx.episode_total >= u64::from(ctx.outcome.quantity));
    match mode {
        RewardMode::Difference => difference_reward(ctx.rule, ctx.own_offer(), ctx.partner_offer()),
        RewardMode::Local => local_reward(ctx.outcome.quantity, ctx.own_offer(), ctx.repeated_partner, repeat_penalty),
        RewardMode::Global => global_reward(ctx.episode_total),
    }
}

/// Elementwise dispatch over the paired learners of one episode.
pub fn assign_rewards(mode: RewardMode, contexts: &[RewardContext], repeat_penalty: f64) -> Vec<f64> {
    contexts.iter().map(|c| reward(mode, c, repeat_penalty)).collect()
}
