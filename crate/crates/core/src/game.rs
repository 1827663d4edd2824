//! The two-player liquidity stage game.
//!
//! Both players privately pick a parcel of bonds to offer. What actually
//! trades depends on the [`ClearingRule`]: under `Exact` the offers must be
//! identical and positive, under `MinFill` any two positive offers clear at
//! the smaller of the two. Each player's payoff is the cleared quantity.
//!
//! Balances are unsigned magnitudes. Buyers and sellers are symmetric here;
//! clearing only ever looks at how many units each side is willing to move.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::GameError;

/// Default per-balance bound for [`enumerate_pure_nash`].
pub const DEFAULT_ENUMERATION_BOUND: u32 = 64;

/// A non-negative bond balance, in units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct Balance(pub u32);

/// Number of units a player puts forward in one stage game.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct Offer(pub u32);

impl Balance {
    pub fn get(self) -> u32 {
        self.0
    }

    /// Whether `offer` lies in the game-level action set `{0, ..., balance}`.
    pub fn admits(self, offer: Offer) -> bool {
        offer.0 <= self.0
    }
}

impl Offer {
    pub fn get(self) -> u32 {
        self.0
    }
}

/// How a pair of offers converts into a trade.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClearingRule {
    /// Trade only when both offers are equal and positive.
    Exact,
    /// Any two positive offers trade at the smaller amount.
    MinFill,
}

impl ClearingRule {
    pub const ALL: [ClearingRule; 2] = [ClearingRule::Exact, ClearingRule::MinFill];

    pub fn label(self) -> &'static str {
        match self {
            ClearingRule::Exact => "exact",
            ClearingRule::MinFill => "minfill",
        }
    }
}

impl fmt::Display for ClearingRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for ClearingRule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "exact" => Ok(ClearingRule::Exact),
            "minfill" | "min_fill" | "min-fill" => Ok(ClearingRule::MinFill),
            other => Err(format!("unknown clearing rule `{other}` (expected exact | minfill)")),
        }
    }
}

/// Result of clearing one pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TradeOutcome {
    pub offer_i: Offer,
    pub offer_j: Offer,
    /// Cleared quantity `q`.
    pub quantity: u32,
    pub matched: bool,
}

/// A pure strategy profile `(a_i, a_j)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StrategyProfile {
    pub action_i: Offer,
    pub action_j: Offer,
}

impl StrategyProfile {
    pub fn new(action_i: u32, action_j: u32) -> Self {
        Self {
            action_i: Offer(action_i),
            action_j: Offer(action_j),
        }
    }
}

impl fmt::Display for StrategyProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.action_i.0, self.action_j.0)
    }
}

/// Clear a pair of offers under `rule`.
pub fn clear(rule: ClearingRule, a_i: Offer, a_j: Offer) -> TradeOutcome {
    let quantity = match rule {
        ClearingRule::Exact if a_i.0 == a_j.0 => a_i.0,
        ClearingRule::Exact => 0,
        ClearingRule::MinFill => a_i.0.min(a_j.0),
    };
    TradeOutcome {
        offer_i: a_i,
        offer_j: a_j,
        quantity,
        matched: quantity > 0,
    }
}

/// Both players receive the cleared quantity.
pub fn payoff(outcome: &TradeOutcome) -> (u32, u32) {
    (outcome.quantity, outcome.quantity)
}

/// All legal offers for a player holding `balance` that maximise payoff
/// against the fixed opposing offer `a_j`.
pub fn best_response_set(rule: ClearingRule, balance: Balance, a_j: Offer) -> BTreeSet<Offer> {
    let payoffs: Vec<(Offer, u32)> = (0..=balance.0)
        .map(|a| {
            let offer = Offer(a);
            (offer, payoff(&clear(rule, offer, a_j)).0)
        })
        .collect();
    let best = payoffs.iter().map(|&(_, p)| p).max().unwrap_or(0);
    payoffs.into_iter().filter(|&(_, p)| p == best).map(|(o, _)| o).collect()
}

/// Exhaustively enumerate every pure Nash equilibrium of the stage game with
/// balances `b_i`, `b_j`.
///
/// A profile qualifies when neither player has a strictly improving
/// unilateral deviation. Balances above `bound` are rejected since the
/// search is `O(b_i * b_j * (b_i + b_j))`.
pub fn enumerate_pure_nash(rule: ClearingRule, b_i: Balance, b_j: Balance, bound: u32) -> Result<BTreeSet<StrategyProfile>, GameError> {
    for b in [b_i, b_j] {
        if b.0 > bound {
            return Err(GameError::EnumerationBound { balance: b.0, bound });
        }
    }

    let mut equilibria = BTreeSet::new();
    for a_i in 0..=b_i.0 {
        for a_j in 0..=b_j.0 {
            let (u_i, u_j) = payoff(&clear(rule, Offer(a_i), Offer(a_j)));
            let i_deviates = (0..=b_i.0).any(|d| payoff(&clear(rule, Offer(d), Offer(a_j))).0 > u_i);
            let j_deviates = (0..=b_j.0).any(|d| payoff(&clear(rule, Offer(a_i), Offer(d))).1 > u_j);
            if !i_deviates && !j_deviates {
                equilibria.insert(StrategyProfile::new(a_i, a_j));
            }
        }
    }
    Ok(equilibria)
}

/// Direct characterisation of the MinFill pure equilibria.
///
/// Payoff `min(a_i, a_j)` can only be raised by the player holding the
/// smaller offer, and only if that player still has headroom. So a profile
/// is an equilibrium iff neither player sits strictly below both the other
/// offer and their own balance.
pub fn is_minfill_equilibrium(b_i: Balance, b_j: Balance, profile: StrategyProfile) -> bool {
    let (a_i, a_j) = (profile.action_i.0, profile.action_j.0);
    if a_i > b_i.0 || a_j > b_j.0 {
        return false;
    }
    let i_stuck = a_i >= a_j || a_i == b_i.0;
    let j_stuck = a_j >= a_i || a_j == b_j.0;
    i_stuck && j_stuck
}

/// Equilibria among `set` that actually clear a positive quantity.
pub fn trading_equilibria(rule: ClearingRule, set: &BTreeSet<StrategyProfile>) -> BTreeSet<StrategyProfile> {
    set.iter().copied().filter(|p| clear(rule, p.action_i, p.action_j).matched).collect()
}

/// Check the closed-form equilibrium characterisation against a brute-force
/// equilibrium set.
///
/// Exact: the diagonal `{(a, a) : 0 <= a <= min}` must all be equilibria and
/// the trading equilibria must be exactly the positive diagonal.
/// MinFill: the only trading equilibrium is `(m, m)` with `m = min(b_i, b_j)`.
pub fn matches_closed_form(rule: ClearingRule, b_i: Balance, b_j: Balance, brute_force: &BTreeSet<StrategyProfile>) -> bool {
    let m = b_i.0.min(b_j.0);
    let trading = trading_equilibria(rule, brute_force);
    match rule {
        ClearingRule::Exact => {
            let diagonal_present = (0..=m).all(|a| brute_force.contains(&StrategyProfile::new(a, a)));
            let positive_diagonal: BTreeSet<_> = (1..=m).map(|a| StrategyProfile::new(a, a)).collect();
            diagonal_present && trading == positive_diagonal
        }
        ClearingRule::MinFill => {
            let expected: BTreeSet<_> = if m > 0 {
                [StrategyProfile::new(m, m)].into_iter().collect()
            } else {
                BTreeSet::new()
            };
            trading == expected
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profiles(pairs: &[(u32, u32)]) -> BTreeSet<StrategyProfile> {
        pairs.iter().map(|&(a, b)| StrategyProfile::new(a, b)).collect()
    }

    #[test]
    fn clear_examples() {
        let o = clear(ClearingRule::Exact, Offer(5), Offer(5));
        assert_eq!((o.quantity, o.matched), (5, true));
        let o = clear(ClearingRule::Exact, Offer(5), Offer(4));
        assert_eq!((o.quantity, o.matched), (0, false));
        let o = clear(ClearingRule::MinFill, Offer(7), Offer(3));
        assert_eq!((o.quantity, o.matched), (3, true));
        let o = clear(ClearingRule::MinFill, Offer(0), Offer(9));
        assert_eq!((o.quantity, o.matched), (0, false));
    }

    #[test]
    fn exact_zero_offers_never_clear() {
        let o = clear(ClearingRule::Exact, Offer(0), Offer(0));
        assert_eq!((o.quantity, o.matched), (0, false));
    }

    #[test]
    fn payoff_is_cleared_quantity() {
        assert_eq!(payoff(&clear(ClearingRule::Exact, Offer(5), Offer(5))), (5, 5));
        assert_eq!(payoff(&clear(ClearingRule::Exact, Offer(2), Offer(3))), (0, 0));
        assert_eq!(payoff(&clear(ClearingRule::MinFill, Offer(7), Offer(3))), (3, 3));
    }

    #[test]
    fn best_responses() {
        let br = best_response_set(ClearingRule::Exact, Balance(5), Offer(3));
        assert_eq!(br, [Offer(3)].into_iter().collect());
        let br = best_response_set(ClearingRule::Exact, Balance(2), Offer(3));
        assert_eq!(br, [Offer(0), Offer(1), Offer(2)].into_iter().collect());
        let br = best_response_set(ClearingRule::MinFill, Balance(5), Offer(3));
        assert_eq!(br, [Offer(3), Offer(4), Offer(5)].into_iter().collect());
    }

    // Expected sets below come from a separate best-response table script
    // over all (b_i + 1) * (b_j + 1) profiles, not from this enumerator.
    #[test]
    fn nash_exact_small() {
        let ne = enumerate_pure_nash(ClearingRule::Exact, Balance(2), Balance(3), 64).unwrap();
        // (0, 3): player i cannot reach 3 and player j cannot match a zero offer.
        assert_eq!(ne, profiles(&[(0, 0), (0, 3), (1, 1), (2, 2)]));
        assert_eq!(trading_equilibria(ClearingRule::Exact, &ne), profiles(&[(1, 1), (2, 2)]));
        assert!(matches_closed_form(ClearingRule::Exact, Balance(2), Balance(3), &ne));
    }

    #[test]
    fn nash_minfill_small() {
        let ne = enumerate_pure_nash(ClearingRule::MinFill, Balance(2), Balance(3), 64).unwrap();
        // Neither side can lift min(a_i, a_j) alone once the offers are level.
        assert_eq!(ne, profiles(&[(0, 0), (1, 1), (2, 2), (2, 3)]));
        assert!(ne.contains(&StrategyProfile::new(2, 2)));
        // So (min, min) is an equilibrium but not the only trading one.
        assert!(!matches_closed_form(ClearingRule::MinFill, Balance(2), Balance(3), &ne));
    }

    #[test]
    fn minfill_characterisation_matches_enumeration() {
        for b_i in 0..=8 {
            for b_j in 0..=8 {
                let ne = enumerate_pure_nash(ClearingRule::MinFill, Balance(b_i), Balance(b_j), 64).unwrap();
                for a_i in 0..=b_i {
                    for a_j in 0..=b_j {
                        let p = StrategyProfile::new(a_i, a_j);
                        assert_eq!(
                            ne.contains(&p),
                            is_minfill_equilibrium(Balance(b_i), Balance(b_j), p),
                            "b=({b_i},{b_j}) profile {p}"
                        );
                    }
                }
                let m = b_i.min(b_j);
                assert!(ne.contains(&StrategyProfile::new(m, m)));
                let best = ne.iter().map(|p| clear(ClearingRule::MinFill, p.action_i, p.action_j).quantity).max();
                assert_eq!(best, Some(m));
            }
        }
    }

    #[test]
    fn nash_exact_zero_balance_player() {
        let ne = enumerate_pure_nash(ClearingRule::Exact, Balance(0), Balance(5), 64).unwrap();
        let expected: BTreeSet<_> = (0..=5).map(|a| StrategyProfile::new(0, a)).collect();
        assert_eq!(ne, expected);
        assert!(trading_equilibria(ClearingRule::Exact, &ne).is_empty());
    }

    #[test]
    fn nash_minfill_equal_balances_is_the_diagonal() {
        // Offering 0 against 0 leaves nobody able to improve unilaterally.
        let ne = enumerate_pure_nash(ClearingRule::MinFill, Balance(3), Balance(3), 64).unwrap();
        assert_eq!(ne, profiles(&[(0, 0), (1, 1), (2, 2), (3, 3)]));
        assert_eq!(trading_equilibria(ClearingRule::MinFill, &ne), profiles(&[(1, 1), (2, 2), (3, 3)]));
    }

    #[test]
    fn enumeration_bound_rejected() {
        let err = enumerate_pure_nash(ClearingRule::Exact, Balance(65), Balance(1), 64).unwrap_err();
        assert!(matches!(err, GameError::EnumerationBound { balance: 65, bound: 64 }));
        assert!(enumerate_pure_nash(ClearingRule::Exact, Balance(4), Balance(4), 3).is_err());
    }

    #[test]
    fn rule_parsing() {
        assert_eq!("MinFill".parse::<ClearingRule>().unwrap(), ClearingRule::MinFill);
        assert_eq!("exact".parse::<ClearingRule>().unwrap(), ClearingRule::Exact);
        assert!("partial".parse::<ClearingRule>().is_err());
    }
}
