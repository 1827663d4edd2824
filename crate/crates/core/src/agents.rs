//! Agent policies.
//!
//! All learners share one tabular Q-learning core; the reward mode only
//! changes the scalar fed into [`QTable::update`]. The two baselines never
//! learn: `random` offers uniformly from `{1, ..., s}` and `greedy` offers
//! its whole balance.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::game::{Balance, Offer};
use crate::rewards::RewardMode;

pub const DEFAULT_ALPHA: f64 = 0.1;
pub const DEFAULT_GAMMA: f64 = 0.9;
pub const DEFAULT_EPSILON: f64 = 0.2;
pub const DEFAULT_Q_INIT: f64 = 0.0;
pub const GREEDY_PENALTY_RATE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Learner(RewardMode),
    Random,
    Greedy,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 5] = [
        PolicyKind::Learner(RewardMode::Difference),
        PolicyKind::Learner(RewardMode::Local),
        PolicyKind::Learner(RewardMode::Global),
        PolicyKind::Random,
        PolicyKind::Greedy,
    ];

    /// Short label used in run directory names and CSV cohort columns.
    pub fn label(self) -> &'static str {
        match self {
            PolicyKind::Learner(m) => m.label(),
            PolicyKind::Random => "random",
            PolicyKind::Greedy => "greedy",
        }
    }

    pub fn is_learner(self) -> bool {
        matches!(self, PolicyKind::Learner(_))
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for PolicyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "random" => Ok(PolicyKind::Random),
            "greedy" => Ok(PolicyKind::Greedy),
            other => other
                .parse::<RewardMode>()
                .map(PolicyKind::Learner)
                .map_err(|_| format!("unknown strategy `{other}` (expected diff | local | global | random | greedy)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearnerParams {
    pub alpha: f64,
    pub gamma: f64,
    pub epsilon: f64,
    /// Starting value of every Q entry.
    pub q_init: f64,
}

impl Default for LearnerParams {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            gamma: DEFAULT_GAMMA,
            epsilon: DEFAULT_EPSILON,
            q_init: DEFAULT_Q_INIT,
        }
    }
}

impl LearnerParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(format!("alpha must lie in (0, 1], got {}", self.alpha));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(format!("gamma must lie in [0, 1), got {}", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(format!("epsilon must lie in [0, 1], got {}", self.epsilon));
        }
        if !self.q_init.is_finite() {
            return Err(format!("q_init must be finite, got {}", self.q_init));
        }
        Ok(())
    }
}

/// Q-values over feasible `(balance, offer)` pairs, `1 <= offer <= balance`.
///
/// Stored as a flat lower-triangular array: row `s` starts at `s(s-1)/2`
/// and holds `s` entries. Row 0 is empty.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    max_state: u32,
    values: Vec<f64>,
}

fn row_start(s: u32) -> usize {
    let s = s as usize;
    s * s.saturating_sub(1) / 2
}

impl QTable {
    pub fn new(max_state: u32) -> Self {
        Self::filled(max_state, 0.0)
    }

    /// Table with every feasible entry set to `init`.
    pub fn filled(max_state: u32, init: f64) -> Self {
        Self {
            max_state,
            values: vec![init; row_start(max_state + 1)],
        }
    }

    pub fn max_state(&self) -> u32 {
        self.max_state
    }

    pub fn is_feasible(&self, s: u32, a: u32) -> bool {
        s <= self.max_state && a >= 1 && a <= s
    }

    pub fn row(&self, s: u32) -> &[f64] {
        let start = row_start(s);
        &self.values[start..start + s as usize]
    }

    pub fn get(&self, s: u32, a: u32) -> f64 {
        assert!(self.is_feasible(s, a), "infeasible state/action ({s}, {a})");
        self.values[row_start(s) + a as usize - 1]
    }

    pub fn set(&mut self, s: u32, a: u32, value: f64) {
        assert!(self.is_feasible(s, a), "infeasible state/action ({s}, {a})");
        self.values[row_start(s) + a as usize - 1] = value;
    }

    /// `max_a Q(s, a)`; an empty action set (s = 0) counts as 0.
    pub fn max_value(&self, s: u32) -> f64 {
        self.row(s)
            .iter()
            .copied()
            .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))))
            .unwrap_or(0.0)
    }

    /// One-step Q-learning update of the single entry `(s, a)`.
    pub fn update(&mut self, s: u32, a: u32, reward: f64, s_next: u32, params: &LearnerParams) {
        assert!(s_next <= self.max_state, "next state {s_next} beyond table");
        let current = self.get(s, a);
        let target = reward + params.gamma * self.max_value(s_next);
        self.set(s, a, current + params.alpha * (target - current));
    }

    /// Iterate `(state, action, value)` in row-major order.
    pub fn entries(&self) -> impl Iterator<Item = (u32, u32, f64)> + '_ {
        (1..=self.max_state).flat_map(move |s| self.row(s).iter().enumerate().map(move |(i, &v)| (s, i as u32 + 1, v)))
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Outcome of one ε-greedy draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Selection {
    pub offer: Offer,
    pub explored: bool,
}

/// Pick an offer for balance `s`, or `None` when the agent is dormant.
pub fn select_action<R: Rng + ?Sized>(q: &QTable, s: Balance, params: &LearnerParams, rng: &mut R) -> Option<Selection> {
    let s = s.get();
    if s == 0 {
        return None;
    }
    if rng.random_bool(params.epsilon) {
        return Some(Selection {
            offer: Offer(rng.random_range(1..=s)),
            explored: true,
        });
    }
    let row = q.row(s);
    let best = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ties = row.iter().filter(|&&v| v == best).count();
    let pick = if ties == 1 { 0 } else { rng.random_range(0..ties) };
    let index = row
        .iter()
        .enumerate()
        .filter(|(_, &v)| v == best)
        .nth(pick)
        .map(|(i, _)| i)
        .expect("tie index in range");
    Some(Selection {
        offer: Offer(index as u32 + 1),
        explored: false,
    })
}

pub fn random_policy<R: Rng + ?Sized>(s: Balance, rng: &mut R) -> Option<Offer> {
    (s.get() >= 1).then(|| Offer(rng.random_range(1..=s.get())))
}

pub fn greedy_policy(s: Balance) -> Option<Offer> {
    (s.get() >= 1).then_some(Offer(s.get()))
}

/// Recorded-liquidity deduction for a greedy agent that offered more than
/// its partner. Metrics only: never touches clearing or balances.
pub fn greedy_liquidity_penalty(a_i: Offer, a_j: Offer, rate: f64) -> f64 {
    rate * f64::from(a_i.0.saturating_sub(a_j.0))
}
