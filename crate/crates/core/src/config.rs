//! Experiment configuration.
//!
//! Config files are flat `key = value` text. Blank lines and `#` comments
//! are ignored and every key is optional. Command-line flags carry the same
//! keys and are applied after the file, so they win.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::agents::{self, LearnerParams, PolicyKind};
use crate::environment::{self, EnvParams, NextState, PopulationSpec};
use crate::error::ConfigError;
use crate::exec::Execution;
use crate::game::ClearingRule;
use crate::metrics;
use crate::rewards::{self, RewardMode};

pub const DEFAULT_EPISODES: u64 = 10_000;
pub const DEFAULT_MASTER_SEED: u64 = 0;
/// Caps above this would make per-agent Q-tables unreasonably large.
pub const MAX_CAP: u32 = 4096;

/// Every recognised key, in canonical order.
pub const KEYS: &[&str] = &[
    "n_agents",
    "fraction_large",
    "cap_small",
    "cap_large",
    "episodes",
    "clearing_rule",
    "strategy",
    "alpha",
    "gamma",
    "epsilon",
    "q_init",
    "repeat_penalty",
    "greedy_penalty_rate",
    "smoothing_window",
    "carryover",
    "next_state",
    "hit_threshold",
    "parallel",
    "export_qtables",
    "master_seed",
    "output_dir",
];

/// Where a default comes from: the modelled market's stated settings, or a
/// choice made for this implementation where none was stated.
fn default_source(key: &str) -> &'static str {
    match key {
        "n_agents" | "fraction_large" | "cap_small" | "cap_large" | "episodes" | "alpha" | "epsilon" | "repeat_penalty" | "greedy_penalty_rate" => "reference",
        "hit_threshold" => "reference-approximate",
        "gamma" | "q_init" | "smoothing_window" | "carryover" | "next_state" => "assumed",
        _ => "runtime",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub n_agents: usize,
    pub fraction_large: f64,
    pub cap_small: u32,
    pub cap_large: u32,
    pub episodes: u64,
    pub clearing_rule: ClearingRule,
    pub strategy: Vec<(PolicyKind, u32)>,
    pub alpha: f64,
    pub gamma: f64,
    pub epsilon: f64,
    pub q_init: f64,
    pub repeat_penalty: f64,
    pub greedy_penalty_rate: f64,
    pub smoothing_window: usize,
    pub carryover: bool,
    pub next_state: NextState,
    pub hit_threshold: f64,
    pub parallel: bool,
    pub export_qtables: bool,
    pub master_seed: u64,
    pub output_dir: PathBuf,
    /// Keys that were set explicitly rather than defaulted.
    #[serde(skip)]
    pub explicit: Vec<String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            n_agents: environment::DEFAULT_N_AGENTS,
            fraction_large: environment::DEFAULT_FRACTION_LARGE,
            cap_small: environment::DEFAULT_CAP_SMALL,
            cap_large: environment::DEFAULT_CAP_LARGE,
            episodes: DEFAULT_EPISODES,
            clearing_rule: ClearingRule::MinFill,
            strategy: vec![(PolicyKind::Learner(RewardMode::Difference), 1)],
            alpha: agents::DEFAULT_ALPHA,
            gamma: agents::DEFAULT_GAMMA,
            epsilon: agents::DEFAULT_EPSILON,
            q_init: agents::DEFAULT_Q_INIT,
            repeat_penalty: rewards::REPEAT_PARTNER_PENALTY,
            greedy_penalty_rate: agents::GREEDY_PENALTY_RATE,
            smoothing_window: metrics::DEFAULT_SMOOTHING_WINDOW,
            carryover: false,
            next_state: NextState::Residual,
            hit_threshold: metrics::DEFAULT_HIT_THRESHOLD,
            parallel: true,
            export_qtables: true,
            master_seed: DEFAULT_MASTER_SEED,
            output_dir: PathBuf::from("runs"),
            explicit: Vec::new(),
        }
    }
}

fn invalid(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.to_string(),
        message: message.into(),
    }
}

fn range(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Range {
        key: key.to_string(),
        message: message.into(),
    }
}

fn parse_int(key: &str, value: &str) -> Result<i128, ConfigError> {
    value
        .trim()
        .replace('_', "")
        .parse::<i128>()
        .map_err(|e| invalid(key, format!("`{value}`: {e}")))
}

fn parse_unsigned<T: TryFrom<i128>>(key: &str, value: &str) -> Result<T, ConfigError> {
    let v = parse_int(key, value)?;
    if v < 0 {
        return Err(range(key, format!("must be non-negative, got {v}")));
    }
    T::try_from(v).map_err(|_| range(key, format!("{v} does not fit")))
}

fn parse_float(key: &str, value: &str) -> Result<f64, ConfigError> {
    let v: f64 = value.trim().parse().map_err(|e| invalid(key, format!("`{value}`: {e}")))?;
    if !v.is_finite() {
        return Err(range(key, "must be finite"));
    }
    Ok(v)
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value.trim().to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        other => Err(invalid(key, format!("`{other}` is not a boolean"))),
    }
}

/// Parse `diff` or a weighted mix such as `diff:2,greedy:1`.
pub fn parse_strategy(value: &str) -> Result<Vec<(PolicyKind, u32)>, ConfigError> {
    let mut out = Vec::new();
    for part in value.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (name, weight) = match part.split_once(':') {
            Some((n, w)) => (n, parse_unsigned::<u32>("strategy", w)?),
            None => (part, 1),
        };
        let kind: PolicyKind = name.parse().map_err(|e: String| invalid("strategy", e))?;
        if out.iter().any(|(k, _)| *k == kind) {
            return Err(invalid("strategy", format!("`{name}` listed twice")));
        }
        out.push((kind, weight));
    }
    if out.is_empty() {
        return Err(invalid("strategy", "no strategy given"));
    }
    if out.iter().all(|(_, w)| *w == 0) {
        return Err(range("strategy", "weights sum to zero"));
    }
    Ok(out)
}

pub fn strategy_label(strategy: &[(PolicyKind, u32)]) -> String {
    match strategy {
        [(k, _)] => k.label().to_string(),
        mix => mix.iter().map(|(k, w)| format!("{}:{w}", k.label())).collect::<Vec<_>>().join(","),
    }
}

impl ExperimentConfig {
    /// Apply one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let key = key.trim().replace('-', "_");
        let k = key.as_str();
        match k {
            "n_agents" => self.n_agents = parse_unsigned(k, value)?,
            "fraction_large" => self.fraction_large = parse_float(k, value)?,
            "cap_small" => self.cap_small = parse_unsigned(k, value)?,
            "cap_large" => self.cap_large = parse_unsigned(k, value)?,
            "episodes" => self.episodes = parse_unsigned(k, value)?,
            "clearing_rule" => self.clearing_rule = value.parse().map_err(|e: String| invalid(k, e))?,
            "strategy" => self.strategy = parse_strategy(value)?,
            "alpha" => self.alpha = parse_float(k, value)?,
            "gamma" => self.gamma = parse_float(k, value)?,
            "epsilon" => self.epsilon = parse_float(k, value)?,
            "q_init" => self.q_init = parse_float(k, value)?,
            "repeat_penalty" => self.repeat_penalty = parse_float(k, value)?,
            "greedy_penalty_rate" => self.greedy_penalty_rate = parse_float(k, value)?,
            "smoothing_window" => self.smoothing_window = parse_unsigned(k, value)?,
            "carryover" => self.carryover = parse_bool(k, value)?,
            "next_state" => self.next_state = value.parse().map_err(|e: String| invalid(k, e))?,
            "hit_threshold" => self.hit_threshold = parse_float(k, value)?,
            "parallel" => self.parallel = parse_bool(k, value)?,
            "export_qtables" => self.export_qtables = parse_bool(k, value)?,
            "master_seed" => self.master_seed = parse_unsigned(k, value)?,
            "output_dir" => self.output_dir = PathBuf::from(value.trim()),
            _ => return Err(ConfigError::UnknownKey(key.clone())),
        }
        if !self.explicit.iter().any(|e| e == k) {
            self.explicit.push(key);
        }
        Ok(())
    }

    /// Apply the contents of a flat key-value file.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<(), ConfigError> {
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').or_else(|| line.split_once(':')).ok_or_else(|| ConfigError::Parse {
                path: origin.to_string(),
                line: idx + 1,
                message: format!("expected `key = value`, got `{line}`"),
            })?;
            let value = value.trim().trim_matches('"');
            self.set(key, value).map_err(|e| match e {
                ConfigError::UnknownKey(_) | ConfigError::Invalid { .. } | ConfigError::Range { .. } => ConfigError::Parse {
                    path: origin.to_string(),
                    line: idx + 1,
                    message: e.to_string(),
                },
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n_agents == 0 {
            return Err(range("n_agents", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.fraction_large) {
            return Err(range("fraction_large", format!("must lie in [0, 1], got {}", self.fraction_large)));
        }
        for (key, cap) in [("cap_small", self.cap_small), ("cap_large", self.cap_large)] {
            if cap == 0 || cap > MAX_CAP {
                return Err(range(key, format!("must lie in [1, {MAX_CAP}], got {cap}")));
            }
        }
        self.learner().validate().map_err(|m| {
            let key = ["alpha", "gamma", "epsilon", "q_init"]
                .into_iter()
                .find(|k| m.starts_with(k))
                .unwrap_or("learner");
            range(key, m)
        })?;
        if self.repeat_penalty < 0.0 {
            return Err(range("repeat_penalty", "must be non-negative"));
        }
        if self.greedy_penalty_rate < 0.0 {
            return Err(range("greedy_penalty_rate", "must be non-negative"));
        }
        if self.smoothing_window == 0 {
            return Err(range("smoothing_window", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.hit_threshold) {
            return Err(range("hit_threshold", "must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Defaults, then `file`, then `overrides`; validated. In `strict` mode
    /// the master seed has to be given explicitly.
    pub fn load(file: Option<&Path>, overrides: &[(String, String)], strict: bool) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        if let Some(path) = file {
            let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
                path: path.to_path_buf(),
                source,
            })?;
            cfg.apply_text(&text, &path.display().to_string())?;
        }
        for (k, v) in overrides {
            cfg.set(k, v)?;
        }
        if strict && !cfg.explicit.iter().any(|k| k == "master_seed") {
            return Err(ConfigError::MissingSeed);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn learner(&self) -> LearnerParams {
        LearnerParams {
            alpha: self.alpha,
            gamma: self.gamma,
            epsilon: self.epsilon,
            q_init: self.q_init,
        }
    }

    pub fn population(&self) -> PopulationSpec {
        PopulationSpec {
            n_agents: self.n_agents,
            fraction_large: self.fraction_large,
            cap_small: self.cap_small,
            cap_large: self.cap_large,
            composition: self.strategy.clone(),
        }
    }

    pub fn env_params(&self) -> EnvParams {
        EnvParams {
            rule: self.clearing_rule,
            learner: self.learner(),
            repeat_penalty: self.repeat_penalty,
            greedy_penalty_rate: self.greedy_penalty_rate,
            next_state: self.next_state,
            carryover: self.carryover,
            execution: Execution::from_flag(self.parallel),
        }
    }

    pub fn strategy_label(&self) -> String {
        strategy_label(&self.strategy)
    }

    /// Run directory name, e.g. `minfill_diff_seed3`.
    pub fn run_name(&self) -> String {
        let strat = match self.strategy.as_slice() {
            [(k, _)] => k.label().to_string(),
            _ => "mixed".to_string(),
        };
        format!("{}_{}_seed{}", self.clearing_rule.label(), strat, self.master_seed)
    }

    /// Flat `key = value` rendering that round-trips through [`Self::apply_text`].
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.key_values() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn key_values(&self) -> Vec<(&'static str, String)> {
        vec![
            ("n_agents", self.n_agents.to_string()),
            ("fraction_large", self.fraction_large.to_string()),
            ("cap_small", self.cap_small.to_string()),
            ("cap_large", self.cap_large.to_string()),
            ("episodes", self.episodes.to_string()),
            ("clearing_rule", self.clearing_rule.label().to_string()),
            ("strategy", self.strategy_label()),
            ("alpha", self.alpha.to_string()),
            ("gamma", self.gamma.to_string()),
            ("epsilon", self.epsilon.to_string()),
            ("q_init", self.q_init.to_string()),
            ("repeat_penalty", self.repeat_penalty.to_string()),
            ("greedy_penalty_rate", self.greedy_penalty_rate.to_string()),
            ("smoothing_window", self.smoothing_window.to_string()),
            ("carryover", self.carryover.to_string()),
            ("next_state", self.next_state.to_string()),
            ("hit_threshold", self.hit_threshold.to_string()),
            ("parallel", self.parallel.to_string()),
            ("export_qtables", self.export_qtables.to_string()),
            ("master_seed", self.master_seed.to_string()),
            ("output_dir", self.output_dir.display().to_string()),
        ]
    }

    /// For each key: whether its value is an override or which kind of default.
    pub fn provenance(&self) -> BTreeMap<&'static str, String> {
        KEYS.iter()
            .map(|&k| {
                let src = if self.explicit.iter().any(|e| e == k) {
                    "override".to_string()
                } else {
                    format!("{}-default", default_source(k))
                };
                (k, src)
            })
            .collect()
    }
}
