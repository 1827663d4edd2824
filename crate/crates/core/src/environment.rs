//! Population-level episode loop.
//!
//! One episode is: fresh balances, a uniform random matching of every
//! eligible agent, simultaneous offers, clearing, balance updates, rewards
//! and Q-updates. Offers are all committed before any pair clears, so the
//! order pairs are processed in is irrelevant.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agents::{self, greedy_liquidity_penalty, LearnerParams, PolicyKind, QTable};
use crate::error::InvariantViolation;
use crate::exec::{self, Execution};
use crate::game::{clear, Balance, ClearingRule, Offer, TradeOutcome};
use crate::rewards::{self, RewardContext};
use crate::rng::{SeedTree, StreamRng};

pub const DEFAULT_N_AGENTS: usize = 1300;
pub const DEFAULT_FRACTION_LARGE: f64 = 0.33;
pub const DEFAULT_CAP_SMALL: u32 = 10;
pub const DEFAULT_CAP_LARGE: u32 = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FirmSize {
    Small,
    Large,
}

/// What the Q-update bootstraps from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NextState {
    /// Residual balance `s - q` after this episode's trade.
    #[default]
    Residual,
    /// The balance the agent opens the next episode with.
    Fresh,
}

impl FromStr for NextState {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "residual" => Ok(NextState::Residual),
            "fresh" => Ok(NextState::Fresh),
            other => Err(format!("unknown next_state `{other}` (expected residual | fresh)")),
        }
    }
}

impl fmt::Display for NextState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NextState::Residual => "residual",
            NextState::Fresh => "fresh",
        })
    }
}

#[derive(Debug, Clone)]
pub struct AgentState {
    pub id: usize,
    pub size: FirmSize,
    pub cap: u32,
    pub balance: Balance,
    pub policy: PolicyKind,
    /// Present for learners only.
    pub qtable: Option<QTable>,
    /// Partner in the immediately preceding episode.
    pub last_partner: Option<usize>,
}

/// Static shape of a population.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationSpec {
    pub n_agents: usize,
    pub fraction_large: f64,
    pub cap_small: u32,
    pub cap_large: u32,
    /// Policy mix as `(kind, weight)`; a single entry gives a homogeneous run.
    pub composition: Vec<(PolicyKind, u32)>,
}

impl PopulationSpec {
    pub fn homogeneous(n_agents: usize, policy: PolicyKind) -> Self {
        Self {
            n_agents,
            fraction_large: DEFAULT_FRACTION_LARGE,
            cap_small: DEFAULT_CAP_SMALL,
            cap_large: DEFAULT_CAP_LARGE,
            composition: vec![(policy, 1)],
        }
    }

    pub fn n_large(&self) -> usize {
        (self.n_agents as f64 * self.fraction_large).round() as usize
    }
}

/// Largest-remainder split of `n` across `weights`.
fn apportion(n: usize, weights: &[u32]) -> Vec<usize> {
    let total: u64 = weights.iter().map(|&w| u64::from(w)).sum();
    if total == 0 {
        return vec![0; weights.len()];
    }
    let exact: Vec<(usize, u64)> = weights
        .iter()
        .map(|&w| (n * w as usize / total as usize, (n as u64 * u64::from(w)) % total))
        .collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.0).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| exact[b].1.cmp(&exact[a].1).then(a.cmp(&b)));
    let short = n - counts.iter().sum::<usize>();
    for &i in order.iter().take(short) {
        counts[i] += 1;
    }
    counts
}

#[derive(Debug, Clone)]
pub struct Population {
    pub agents: Vec<AgentState>,
    pub cap_small: u32,
    pub cap_large: u32,
}

impl Population {
    /// Build the population. Large firms are spread evenly over agent ids so
    /// a mixed composition gets a proportional share of each size.
    pub fn new(spec: &PopulationSpec) -> Self {
        Self::with_q_init(spec, 0.0)
    }

    pub fn with_q_init(spec: &PopulationSpec, q_init: f64) -> Self {
        let n = spec.n_agents;
        let n_large = spec.n_large().min(n);
        let weights: Vec<u32> = spec.composition.iter().map(|c| c.1).collect();
        let counts = apportion(n, &weights);
        let kinds: Vec<PolicyKind> = spec
            .composition
            .iter()
            .zip(&counts)
            .flat_map(|(&(k, _), &c)| std::iter::repeat_n(k, c))
            .collect();
        let max_cap = spec.cap_small.max(spec.cap_large);

        let agents = (0..n)
            .map(|id| {
                let large = (id + 1) * n_large / n > id * n_large / n;
                let (size, cap) = if large {
                    (FirmSize::Large, spec.cap_large)
                } else {
                    (FirmSize::Small, spec.cap_small)
                };
                let policy = kinds[id];
                AgentState {
                    id,
                    size,
                    cap,
                    balance: Balance(0),
                    policy,
                    qtable: policy.is_learner().then(|| QTable::filled(max_cap, q_init)),
                    last_partner: None,
                }
            })
            .collect();
        Self {
            agents,
            cap_small: spec.cap_small,
            cap_large: spec.cap_large,
        }
    }

    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }

    pub fn n_large(&self) -> usize {
        self.agents.iter().filter(|a| a.size == FirmSize::Large).count()
    }

    /// Agents able to trade this episode.
    pub fn eligible(&self) -> Vec<usize> {
        self.agents.iter().filter(|a| a.balance.get() >= 1).map(|a| a.id).collect()
    }
}

/// Draw an opening balance uniformly from `{1, ..., cap}`.
pub fn draw_balance<R: Rng + ?Sized>(cap: u32, rng: &mut R) -> Balance {
    Balance(rng.random_range(1..=cap))
}

/// Reset every balance from its owner's stream for `episode`, returning the
/// streams positioned just after the draw.
///
/// With `carryover` an agent keeps a non-zero residual balance and is only
/// redrawn once it runs dry.
pub fn reset_episode(pop: &mut Population, seeds: &SeedTree, episode: u64, carryover: bool, exec: Execution) -> Vec<StreamRng> {
    exec::map_mut(exec, &mut pop.agents, |i, agent| {
        let mut rng = seeds.agent(episode, i);
        if !carryover || agent.balance.get() == 0 {
            agent.balance = draw_balance(agent.cap, &mut rng);
        }
        rng
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pairing {
    pub pairs: Vec<(usize, usize)>,
    pub unpaired: Option<usize>,
}

/// Uniform random matching: shuffle, then pair neighbours. With an odd
/// count the last agent after the shuffle sits out.
pub fn pair_agents<R: Rng + ?Sized>(eligible: &[usize], rng: &mut R) -> Pairing {
    let mut ids = eligible.to_vec();
    ids.shuffle(rng);
    let pairs = ids.chunks_exact(2).map(|c| (c[0], c[1])).collect();
    let unpaired = (ids.len() % 2 == 1).then(|| ids[ids.len() - 1]);
    Pairing { pairs, unpaired }
}

/// Clear every pair from committed offers. `offers[id]` must be set for
/// every paired agent.
pub fn clear_pairs(rule: ClearingRule, pairs: &[(usize, usize)], offers: &[Option<Offer>]) -> Vec<TradeOutcome> {
    pairs
        .iter()
        .map(|&(i, j)| {
            let a_i = offers[i].expect("paired agent without an offer");
            let a_j = offers[j].expect("paired agent without an offer");
            clear(rule, a_i, a_j)
        })
        .collect()
}

/// Per-episode aggregates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    /// 1-based episode number.
    pub episode: u64,
    pub total_cleared: u64,
    pub initial_balance_sum: u64,
    /// Paired agents (not pairs) whose trade cleared.
    pub hit_count: u64,
    pub paired_count: u64,
    /// Units credited per agent side, greedy over-offer penalty deducted.
    pub cohort_liquidity: BTreeMap<PolicyKind, f64>,
    /// Units cleared per agent side, no penalty.
    pub cohort_volume: BTreeMap<PolicyKind, u64>,
}

impl EpisodeRecord {
    pub fn hit_rate(&self) -> Option<f64> {
        (self.paired_count > 0).then(|| self.hit_count as f64 / self.paired_count as f64)
    }

    /// Fraction of opening balances that changed hands. Each unit cleared
    /// leaves both sides of the pair, so the numerator is `2G`.
    pub fn cleared_fraction(&self) -> Option<f64> {
        (self.initial_balance_sum > 0).then(|| 2.0 * self.total_cleared as f64 / self.initial_balance_sum as f64)
    }
}

/// Knobs that shape an episode but not the population.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvParams {
    pub rule: ClearingRule,
    pub learner: LearnerParams,
    pub repeat_penalty: f64,
    pub greedy_penalty_rate: f64,
    pub next_state: NextState,
    pub carryover: bool,
    pub execution: Execution,
}

impl EnvParams {
    pub fn new(rule: ClearingRule) -> Self {
        Self {
            rule,
            learner: LearnerParams::default(),
            repeat_penalty: rewards::REPEAT_PARTNER_PENALTY,
            greedy_penalty_rate: agents::GREEDY_PENALTY_RATE,
            next_state: NextState::Residual,
            carryover: false,
            execution: Execution::default(),
        }
    }
}

/// Per-agent view of its own trade this episode.
#[derive(Debug, Clone, Copy)]
struct Leg {
    partner: usize,
    outcome: TradeOutcome,
}

/// Extra per-episode detail for tests and diagnostics.
#[derive(Debug, Clone, Default)]
pub struct EpisodeTrace {
    pub pairing: Option<Pairing>,
    pub outcomes: Vec<TradeOutcome>,
    pub opening: Vec<Balance>,
    pub closing: Vec<Balance>,
    pub explored: u64,
    pub selections: u64,
}

/// A population plus the seeded stream tree driving it.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub population: Population,
    pub params: EnvParams,
    seeds: SeedTree,
    next_episode: u64,
}

impl Simulation {
    pub fn new(spec: &PopulationSpec, params: EnvParams, master_seed: u64) -> Self {
        Self {
            population: Population::with_q_init(spec, params.learner.q_init),
            params,
            seeds: SeedTree::new(master_seed, spec.n_agents),
            next_episode: 0,
        }
    }

    pub fn episodes_run(&self) -> u64 {
        self.next_episode
    }

    pub fn step(&mut self) -> Result<EpisodeRecord, InvariantViolation> {
        self.step_traced().map(|(r, _)| r)
    }

    /// Run one full episode.
    pub fn step_traced(&mut self) -> Result<(EpisodeRecord, EpisodeTrace), InvariantViolation> {
        let e = self.next_episode;
        let p = self.params;
        let exec = p.execution;
        let rule = p.rule;
        let n = self.population.len();

        let mut streams = reset_episode(&mut self.population, &self.seeds, e, p.carryover, exec);
        let opening: Vec<Balance> = self.population.agents.iter().map(|a| a.balance).collect();
        let eligible = self.population.eligible();
        let initial_balance_sum: u64 = eligible.iter().map(|&i| u64::from(opening[i].get())).sum();

        let pairing = pair_agents(&eligible, &mut self.seeds.environment(e));
        let mut partner_of: Vec<Option<usize>> = vec![None; n];
        for &(i, j) in &pairing.pairs {
            partner_of[i] = Some(j);
            partner_of[j] = Some(i);
        }

        // Commit every offer before anything clears.
        let choices: Vec<Option<(Offer, bool)>> = {
            let agents = &self.population.agents;
            let learner = p.learner;
            exec::map_mut(exec, &mut streams, |i, rng| {
                partner_of[i]?;
                let agent = &agents[i];
                let pick = match agent.policy {
                    PolicyKind::Learner(_) => {
                        let q = agent.qtable.as_ref().expect("learner without Q-table");
                        agents::select_action(q, agent.balance, &learner, rng).map(|s| (s.offer, s.explored))
                    }
                    PolicyKind::Random => agents::random_policy(agent.balance, rng).map(|o| (o, false)),
                    PolicyKind::Greedy => agents::greedy_policy(agent.balance).map(|o| (o, false)),
                };
                pick
            })
        };
        let offers: Vec<Option<Offer>> = choices.iter().map(|c| c.map(|(o, _)| o)).collect();
        let outcomes = clear_pairs(rule, &pairing.pairs, &offers);
        let total_cleared: u64 = outcomes.iter().map(|o| u64::from(o.quantity)).sum();

        let mut legs: Vec<Option<Leg>> = vec![None; n];
        for (&(i, j), o) in pairing.pairs.iter().zip(&outcomes) {
            legs[i] = Some(Leg { partner: j, outcome: *o });
            legs[j] = Some(Leg {
                partner: i,
                outcome: clear(rule, o.offer_j, o.offer_i),
            });
        }

        // Fresh bootstrapping looks ahead at next episode's opening draw.
        let seeds = &self.seeds;
        let carryover = p.carryover;
        let fresh_next = |i: usize, cap: u32, residual: u32| -> u32 {
            if carryover && residual > 0 {
                residual
            } else {
                draw_balance(cap, &mut seeds.agent(e + 1, i)).get()
            }
        };

        let violations: Vec<Option<String>> = exec::map_mut(exec, &mut self.population.agents, |i, agent| {
            let Some(leg) = legs[i] else {
                agent.last_partner = None;
                return None;
            };
            let q = leg.outcome.quantity;
            let s = agent.balance.get();
            if q > s {
                return Some(format!("agent {i} cleared {q} with balance {s}"));
            }
            let residual = s - q;
            if let PolicyKind::Learner(mode) = agent.policy {
                let ctx = RewardContext {
                    rule,
                    outcome: leg.outcome,
                    episode_total: total_cleared,
                    repeated_partner: agent.last_partner == Some(leg.partner),
                };
                let r = rewards::reward(mode, &ctx, p.repeat_penalty);
                let s_next = match p.next_state {
                    NextState::Residual => residual,
                    NextState::Fresh => fresh_next(i, agent.cap, residual),
                };
                let q_table = agent.qtable.as_mut().expect("learner without Q-table");
                q_table.update(s, leg.outcome.offer_i.get(), r, s_next, &p.learner);
            }
            agent.balance = Balance(residual);
            agent.last_partner = Some(leg.partner);
            None
        });
        if let Some(msg) = violations.into_iter().flatten().next() {
            return Err(InvariantViolation { episode: e + 1, message: msg });
        }

        let mut cohort_liquidity: BTreeMap<PolicyKind, f64> = BTreeMap::new();
        let mut cohort_volume: BTreeMap<PolicyKind, u64> = BTreeMap::new();
        for agent in &self.population.agents {
            cohort_liquidity.entry(agent.policy).or_insert(0.0);
            cohort_volume.entry(agent.policy).or_insert(0);
        }
        for (i, leg) in legs.iter().enumerate() {
            let Some(leg) = leg else { continue };
            let kind = self.population.agents[i].policy;
            let q = leg.outcome.quantity;
            let mut credited = f64::from(q);
            if kind == PolicyKind::Greedy && rule == ClearingRule::MinFill {
                credited -= greedy_liquidity_penalty(leg.outcome.offer_i, leg.outcome.offer_j, p.greedy_penalty_rate);
            }
            *cohort_liquidity.get_mut(&kind).expect("cohort present") += credited;
            *cohort_volume.get_mut(&kind).expect("cohort present") += u64::from(q);
        }

        let matched_pairs = outcomes.iter().filter(|o| o.matched).count() as u64;
        let record = EpisodeRecord {
            episode: e + 1,
            total_cleared,
            initial_balance_sum,
            hit_count: 2 * matched_pairs,
            paired_count: 2 * pairing.pairs.len() as u64,
            cohort_liquidity,
            cohort_volume,
        };
        if record.total_cleared > record.initial_balance_sum || record.hit_count > record.paired_count {
            return Err(InvariantViolation {
                episode: e + 1,
                message: format!("aggregate bounds broken: {record:?}"),
            });
        }

        let selections = choices.iter().flatten().count() as u64;
        let explored = choices.iter().flatten().filter(|c| c.1).count() as u64;
        let trace = EpisodeTrace {
            pairing: Some(pairing),
            outcomes,
            opening,
            closing: self.population.agents.iter().map(|a| a.balance).collect(),
            explored,
            selections,
        };
        self.next_episode += 1;
        Ok((record, trace))
    }

    pub fn run(&mut self, episodes: u64) -> Result<Vec<EpisodeRecord>, InvariantViolation> {
        (0..episodes).map(|_| self.step()).collect()
    }

    /// Mean Q-table over all learners of `kind`, or `None` if there are none.
    pub fn cohort_qtable(&self, kind: PolicyKind) -> Option<QTable> {
        let tables: Vec<&QTable> = self
            .population
            .agents
            .iter()
            .filter(|a| a.policy == kind)
            .filter_map(|a| a.qtable.as_ref())
            .collect();
        let first = tables.first()?;
        let mut mean = QTable::new(first.max_state());
        for (s, a, _) in first.entries() {
            let sum: f64 = tables.iter().map(|t| t.get(s, a)).sum();
            mean.set(s, a, sum / tables.len() as f64);
        }
        Some(mean)
    }
}
