//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fail.
//!
//! Desk scale: 100 agents, 2000 episodes, seeds 1..=5.

use std::collections::BTreeMap;
use std::process::ExitCode;

use liquidity_swarm::agents::PolicyKind;
use liquidity_swarm::config::ExperimentConfig;
use liquidity_swarm::environment::{EnvParams, PopulationSpec, Simulation};
use liquidity_swarm::exec::Execution;
use liquidity_swarm::game::{clear, enumerate_pure_nash, matches_closed_form, Balance, ClearingRule, Offer, DEFAULT_ENUMERATION_BOUND};
use liquidity_swarm::metrics::{self, SeriesPoint};
use liquidity_swarm::rewards::{difference_reward, RewardMode};
use liquidity_swarm::runner::{self, RunOutput};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const N_AGENTS: usize = 100;
const EPISODES: u64 = 2000;
const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
const WINDOW: usize = 100;

const DIFF: PolicyKind = PolicyKind::Learner(RewardMode::Difference);
const LOCAL: PolicyKind = PolicyKind::Learner(RewardMode::Local);
const GLOBAL: PolicyKind = PolicyKind::Learner(RewardMode::Global);

struct Verdict {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn desk_config(rule: ClearingRule, kind: PolicyKind, seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        n_agents: N_AGENTS,
        episodes: EPISODES,
        clearing_rule: rule,
        strategy: vec![(kind, 1)],
        master_seed: seed,
        ..ExperimentConfig::default()
    }
}

/// Desk sweep, keyed by (rule, strategy) with one run per seed.
type Sweep = BTreeMap<(ClearingRule, PolicyKind), Vec<RunOutput>>;

fn desk_sweep() -> Sweep {
    let mut grid: Vec<(ClearingRule, PolicyKind)> = PolicyKind::ALL.iter().map(|&k| (ClearingRule::MinFill, k)).collect();
    grid.push((ClearingRule::Exact, DIFF));
    grid.push((ClearingRule::Exact, LOCAL));
    grid.into_iter()
        .map(|(rule, kind)| {
            let runs = SEEDS
                .iter()
                .map(|&s| runner::simulate(&desk_config(rule, kind, s)).expect("desk run"))
                .collect();
            ((rule, kind), runs)
        })
        .collect()
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Paired t statistic of `a - b` across seeds.
fn paired_t(a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let m = mean(&d);
    let var = d.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (d.len() - 1) as f64;
    m / (var / d.len() as f64).sqrt()
}

/// Smoothed hit rate averaged pointwise over seeds.
fn mean_hit_series(runs: &[RunOutput]) -> Vec<SeriesPoint> {
    let per_seed: Vec<Vec<SeriesPoint>> = runs.iter().map(|r| metrics::hit_rate(&r.records, WINDOW)).collect();
    (0..per_seed[0].len())
        .map(|t| SeriesPoint {
            episode: per_seed[0][t].episode,
            value: mean(&per_seed.iter().map(|s| s[t].value).collect::<Vec<_>>()),
        })
        .collect()
}

fn h1_ordering(sweep: &Sweep) -> Verdict {
    let liquidity = |kind: PolicyKind| -> Vec<f64> { sweep[&(ClearingRule::MinFill, kind)].iter().map(|r| r.cohort_liquidity(kind)).collect() };
    let diff = liquidity(DIFF);
    let others: Vec<(PolicyKind, Vec<f64>)> = [LOCAL, GLOBAL, PolicyKind::Random, PolicyKind::Greedy]
        .iter()
        .map(|&k| (k, liquidity(k)))
        .collect();

    let top_seeds = (0..SEEDS.len()).filter(|&s| others.iter().all(|(_, o)| diff[s] > o[s])).count();
    let mut detail = format!("diff top in {top_seeds}/5 seeds; mean/episode diff={:.1}", mean(&diff) / EPISODES as f64);
    for (k, o) in &others {
        detail += &format!(" {}={:.1} (t={:.1})", k.label(), mean(o) / EPISODES as f64, paired_t(&diff, o));
    }
    Verdict {
        name: "H1 ordering (MinFill)",
        pass: top_seeds >= 4,
        detail,
    }
}

fn h2_threshold(sweep: &Sweep) -> Verdict {
    let runs = &sweep[&(ClearingRule::Exact, DIFF)];
    let smoothed = mean_hit_series(runs);
    let crossing = metrics::first_crossing(&smoothed, 0.60);
    let deadline = (EPISODES as f64 * 0.3) as u64;
    let tail = mean(&runs.iter().map(|r| r.summary.mean_hit_rate_tail).collect::<Vec<_>>());
    let early = crossing.is_some_and(|e| e <= deadline);
    let sustained = (0.60..=0.80).contains(&tail);
    Verdict {
        name: "H2 threshold (Exact)",
        pass: early && sustained,
        detail: format!("smoothed >= 0.60 at episode {crossing:?} (deadline {deadline}); tail mean {tail:.3} (want [0.60, 0.80])"),
    }
}

fn minfill_hit_identity(sweep: &Sweep) -> Verdict {
    let mut episodes = 0usize;
    let mut off = 0usize;
    for ((rule, _), runs) in sweep {
        if *rule != ClearingRule::MinFill {
            continue;
        }
        for r in runs.iter().flat_map(|r| &r.records) {
            episodes += 1;
            if r.hit_count != r.paired_count || r.paired_count == 0 {
                off += 1;
            }
        }
    }
    Verdict {
        name: "MinFill hit-rate identity",
        pass: off == 0,
        detail: format!("{off} of {episodes} episodes below 1.0"),
    }
}

fn exact_diff_local_gap(sweep: &Sweep) -> Verdict {
    let diff = mean_hit_series(&sweep[&(ClearingRule::Exact, DIFF)]);
    let local = mean_hit_series(&sweep[&(ClearingRule::Exact, LOCAL)]);
    let half = diff.len() / 2;
    let gap = diff[half..]
        .iter()
        .zip(&local[half..])
        .map(|(a, b)| (a.value - b.value).abs())
        .fold(0.0, f64::max);
    Verdict {
        name: "Exact diff/local near-identity",
        pass: gap <= 0.05,
        detail: format!("max smoothed gap over final half {gap:.3} (want <= 0.05)"),
    }
}

fn equilibrium_oracle() -> Verdict {
    let mut mismatches: BTreeMap<&str, Vec<(u32, u32)>> = BTreeMap::new();
    for rule in ClearingRule::ALL {
        let bad = mismatches.entry(rule.label()).or_default();
        for b_i in 1..=12 {
            for b_j in 1..=12 {
                let ne = enumerate_pure_nash(rule, Balance(b_i), Balance(b_j), DEFAULT_ENUMERATION_BOUND).expect("within bound");
                if !matches_closed_form(rule, Balance(b_i), Balance(b_j), &ne) {
                    bad.push((b_i, b_j));
                }
            }
        }
    }
    let total: usize = mismatches.values().map(Vec::len).sum();
    let detail = mismatches
        .iter()
        .map(|(rule, bad)| {
            format!(
                "{rule}: {} of 144 mismatched{}",
                bad.len(),
                bad.first().map(|b| format!(", first {b:?}")).unwrap_or_default()
            )
        })
        .collect::<Vec<_>>()
        .join("; ");
    Verdict {
        name: "Equilibrium oracle",
        pass: total == 0,
        detail,
    }
}

fn difference_identity() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut violations = 0usize;
    for _ in 0..100_000 {
        let rule = ClearingRule::ALL[rng.random_range(0..2)];
        let a_i = Offer(rng.random_range(0..=40));
        let a_j = Offer(rng.random_range(0..=40));
        if difference_reward(rule, a_i, a_j) != f64::from(clear(rule, a_i, a_j).quantity) {
            violations += 1;
        }
    }

    let mut episode_violations = 0usize;
    let mut episodes = 0usize;
    for rule in ClearingRule::ALL {
        let mut sim = Simulation::new(&PopulationSpec::homogeneous(N_AGENTS, DIFF), EnvParams::new(rule), 7);
        for _ in 0..500 {
            let (rec, trace) = sim.step_traced().expect("episode");
            let sum: f64 = trace
                .outcomes
                .iter()
                .map(|o| difference_reward(rule, o.offer_i, o.offer_j) + difference_reward(rule, o.offer_j, o.offer_i))
                .sum();
            episodes += 1;
            if sum != 2.0 * rec.total_cleared as f64 {
                episode_violations += 1;
            }
        }
    }
    Verdict {
        name: "Difference-reward identity",
        pass: violations == 0 && episode_violations == 0,
        detail: format!("{violations} of 100000 triples; {episode_violations} of {episodes} episodes with sum != 2G"),
    }
}

fn determinism() -> Verdict {
    let mut diffs = Vec::new();
    for rule in ClearingRule::ALL {
        let base = desk_config(rule, DIFF, 11);
        let par = runner::simulate(&ExperimentConfig {
            parallel: true,
            ..base.clone()
        })
        .expect("parallel run");
        let seq = runner::simulate(&ExperimentConfig { parallel: false, ..base }).expect("sequential run");
        let a = runner::episodes_csv(&par.records).expect("csv");
        let b = runner::episodes_csv(&seq.records).expect("csv");
        if a != b {
            diffs.push(rule.label());
        }
    }
    Verdict {
        name: "Determinism (parallel vs sequential)",
        pass: diffs.is_empty() && Execution::parallel_available(),
        detail: format!("episodes.csv differs for {diffs:?}; parallel build = {}", Execution::parallel_available()),
    }
}

fn conservation_and_bounds() -> Verdict {
    let gamma = EnvParams::new(ClearingRule::MinFill).learner.gamma;
    let q_bound = 40.0 / (1.0 - gamma);
    let mut broken = Vec::new();
    let mut explored = 0u64;
    let mut selections = 0u64;
    let mut q_extreme: f64 = 0.0;

    for rule in ClearingRule::ALL {
        let mut sim = Simulation::new(&PopulationSpec::homogeneous(N_AGENTS, DIFF), EnvParams::new(rule), 3);
        for _ in 0..EPISODES {
            let (rec, trace) = sim.step_traced().expect("episode");
            if rec.total_cleared > rec.initial_balance_sum {
                broken.push(format!("{} ep {}: G above opening sum", rule.label(), rec.episode));
            }
            for (open, close) in trace.opening.iter().zip(&trace.closing) {
                if close.get() > open.get() {
                    broken.push(format!("{} ep {}: balance grew", rule.label(), rec.episode));
                }
            }
            let traded: u64 = trace.opening.iter().zip(&trace.closing).map(|(o, c)| u64::from(o.get() - c.get())).sum();
            if traded != 2 * rec.total_cleared {
                broken.push(format!("{} ep {}: balance change {traded} != 2G", rule.label(), rec.episode));
            }
            explored += trace.explored;
            selections += trace.selections;
        }
        for agent in &sim.population.agents {
            if let Some(q) = &agent.qtable {
                q_extreme = q.values().iter().fold(q_extreme, |m, v| m.max(v.abs()));
            }
        }
    }
    if q_extreme > q_bound {
        broken.push(format!("|Q| reached {q_extreme:.2} above {q_bound:.0}"));
    }

    let eps = EnvParams::new(ClearingRule::MinFill).learner.epsilon;
    let freq = explored as f64 / selections as f64;
    let se = (eps * (1.0 - eps) / selections as f64).sqrt();
    if selections < 100_000 {
        broken.push(format!("only {selections} selections"));
    }
    if (freq - eps).abs() > 3.0 * se {
        broken.push(format!("explore frequency {freq:.4} outside 3 SE of {eps}"));
    }
    Verdict {
        name: "Conservation & bounds",
        pass: broken.is_empty(),
        detail: if broken.is_empty() {
            format!(
                "max |Q| {q_extreme:.2} <= {q_bound:.0}; explore {freq:.4} over {selections} selections (3 SE = {:.4})",
                3.0 * se
            )
        } else {
            broken.into_iter().take(5).collect::<Vec<_>>().join("; ")
        },
    }
}

fn main() -> ExitCode {
    let sweep = desk_sweep();
    let verdicts = [
        h1_ordering(&sweep),
        h2_threshold(&sweep),
        minfill_hit_identity(&sweep),
        exact_diff_local_gap(&sweep),
        equilibrium_oracle(),
        difference_identity(),
        determinism(),
        conservation_and_bounds(),
    ];
    for v in &verdicts {
        println!("{} {}: {}", if v.pass { "PASS" } else { "FAIL" }, v.name, v.detail);
    }
    let failed = verdicts.iter().filter(|v| !v.pass).count();
    println!("acceptance: {} passed, {failed} failed", verdicts.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
