//! Seedable simulator of decentralised bilateral liquidity formation.
//!
//! A population of small and large bond holders is randomly paired every
//! episode. Each agent privately offers part of its balance, the pair
//! clears under an [`game::ClearingRule`], and learners update a tabular Q
//! function from one of three reward signals (difference, local, global).
//! Random and greedy baselines provide reference points.
//!
//! ```
//! use liquidity_swarm::config::ExperimentConfig;
//! use liquidity_swarm::runner::simulate;
//!
//! let mut cfg = ExperimentConfig::default();
//! cfg.set("n_agents", "20").unwrap();
//! cfg.set("episodes", "50").unwrap();
//! let out = simulate(&cfg).unwrap();
//! assert_eq!(out.records.len(), 50);
//! ```

pub mod agents;
pub mod config;
pub mod environment;
pub mod error;
pub mod exec;
pub mod game;
pub mod metrics;
pub mod rewards;
pub mod rng;
pub mod runner;

pub use agents::{LearnerParams, PolicyKind, QTable};
pub use config::ExperimentConfig;
pub use environment::{EnvParams, EpisodeRecord, Population, PopulationSpec, Simulation};
pub use error::{ConfigError, Error, GameError, InvariantViolation};
pub use exec::Execution;
pub use game::{clear, Balance, ClearingRule, Offer, TradeOutcome};
pub use rewards::RewardMode;
