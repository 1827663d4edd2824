//! Run orchestration and on-disk outputs.
//!
//! A run directory holds:
//!
//! | file                  | contents                                                        |
//! |-----------------------|-----------------------------------------------------------------|
//! | `episodes.csv`        | `episode,total_G,initial_balance_sum,hit_count,paired_count`    |
//! | `series.csv`          | `episode,cum_liquidity,pct_cleared_smoothed,hit_rate_smoothed`  |
//! | `summary.csv`         | `total_liquidity,mean_hit_rate_tail,episodes_to_threshold`      |
//! | `cohorts.csv`         | per-cohort recorded liquidity and volume per episode            |
//! | `qtable_<cohort>.csv` | cohort-mean Q-values as `state,action,value`                    |
//! | `config.txt`          | the resolved configuration in config-file syntax                |
//! | `metadata.json`       | config echo, provenance of each value, version, RNG, smoothing  |
//!
//! Every file is written to a temporary name and renamed into place.
//! `metadata.json` goes last and marks the run as complete.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agents::PolicyKind;
use crate::config::ExperimentConfig;
use crate::environment::{EpisodeRecord, Simulation};
use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::game::ClearingRule;
use crate::metrics::{self, RunSummary, SeriesRow};
use crate::rng::RNG_ALGORITHM;

pub const EPISODES_FILE: &str = "episodes.csv";
pub const SERIES_FILE: &str = "series.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const COHORTS_FILE: &str = "cohorts.csv";
pub const CONFIG_FILE: &str = "config.txt";
pub const METADATA_FILE: &str = "metadata.json";
pub const MANIFEST_FILE: &str = "sweep_manifest.csv";

pub const EPISODES_HEADER: [&str; 5] = ["episode", "total_G", "initial_balance_sum", "hit_count", "paired_count"];
pub const SERIES_HEADER: [&str; 4] = ["episode", "cum_liquidity", "pct_cleared_smoothed", "hit_rate_smoothed"];
pub const SUMMARY_HEADER: [&str; 3] = ["total_liquidity", "mean_hit_rate_tail", "episodes_to_threshold"];

/// One row of `episodes.csv`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub episode: u64,
    #[serde(rename = "total_G")]
    pub total_g: u64,
    pub initial_balance_sum: u64,
    pub hit_count: u64,
    pub paired_count: u64,
}

impl From<&EpisodeRecord> for EpisodeRow {
    fn from(r: &EpisodeRecord) -> Self {
        Self {
            episode: r.episode,
            total_g: r.total_cleared,
            initial_balance_sum: r.initial_balance_sum,
            hit_count: r.hit_count,
            paired_count: r.paired_count,
        }
    }
}

impl From<EpisodeRow> for EpisodeRecord {
    fn from(r: EpisodeRow) -> Self {
        Self {
            episode: r.episode,
            total_cleared: r.total_g,
            initial_balance_sum: r.initial_balance_sum,
            hit_count: r.hit_count,
            paired_count: r.paired_count,
            cohort_liquidity: Default::default(),
            cohort_volume: Default::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SummaryRow {
    total_liquidity: f64,
    mean_hit_rate_tail: f64,
    episodes_to_threshold: Option<u64>,
}

#[derive(Debug, Serialize)]
struct Metadata<'a> {
    name: String,
    version: &'static str,
    master_seed: u64,
    rng: &'static str,
    smoothing: &'static str,
    smoothing_window: usize,
    hit_threshold: f64,
    parallel_available: bool,
    config: &'a ExperimentConfig,
    provenance: std::collections::BTreeMap<&'static str, String>,
}

/// Everything one run produced, in memory.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub config: ExperimentConfig,
    pub records: Vec<EpisodeRecord>,
    pub summary: RunSummary,
    pub qtables: Vec<(PolicyKind, crate::agents::QTable)>,
}

impl RunOutput {
    /// Sum of a cohort's recorded liquidity over the run.
    pub fn cohort_liquidity(&self, kind: PolicyKind) -> f64 {
        self.records.iter().map(|r| r.cohort_liquidity.get(&kind).copied().unwrap_or(0.0)).sum()
    }

    /// Recorded liquidity over all cohorts (raw `2G` less any greedy penalty).
    pub fn recorded_liquidity(&self) -> f64 {
        self.records.iter().map(|r| r.cohort_liquidity.values().sum::<f64>()).sum()
    }
}

/// Simulate a validated config without touching the filesystem.
pub fn simulate(config: &ExperimentConfig) -> Result<RunOutput> {
    config.validate()?;
    let mut sim = Simulation::new(&config.population(), config.env_params(), config.master_seed);
    let records = sim.run(config.episodes)?;
    let summary = metrics::summarize(&records, config.smoothing_window, config.hit_threshold);
    let qtables = config.strategy.iter().filter_map(|&(k, _)| sim.cohort_qtable(k).map(|q| (k, q))).collect();
    Ok(RunOutput {
        config: config.clone(),
        records,
        summary,
        qtables,
    })
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.tmp"));
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn csv_bytes<F>(path: &Path, fill: F) -> Result<Vec<u8>>
where
    F: FnOnce(&mut csv::Writer<Vec<u8>>) -> std::result::Result<(), csv::Error>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    fill(&mut w).map_err(|e| Error::csv(path, e))?;
    w.into_inner().map_err(|e| Error::io(path, e.into_error()))
}

pub fn episodes_csv(records: &[EpisodeRecord]) -> Result<Vec<u8>> {
    csv_bytes(Path::new(EPISODES_FILE), |w| {
        if records.is_empty() {
            w.write_record(EPISODES_HEADER)?;
        }
        records.iter().try_for_each(|r| w.serialize(EpisodeRow::from(r)))
    })
}

pub fn series_csv(rows: &[SeriesRow]) -> Result<Vec<u8>> {
    csv_bytes(Path::new(SERIES_FILE), |w| {
        if rows.is_empty() {
            w.write_record(SERIES_HEADER)?;
        }
        rows.iter().try_for_each(|r| w.serialize(r))
    })
}

pub fn summary_csv(summary: &RunSummary) -> Result<Vec<u8>> {
    csv_bytes(Path::new(SUMMARY_FILE), |w| {
        w.serialize(SummaryRow {
            total_liquidity: summary.total_liquidity,
            mean_hit_rate_tail: summary.mean_hit_rate_tail,
            episodes_to_threshold: summary.episodes_to_threshold,
        })
    })
}

fn cohorts_csv(records: &[EpisodeRecord], kinds: &[PolicyKind]) -> Result<Vec<u8>> {
    csv_bytes(Path::new(COHORTS_FILE), |w| {
        let mut header = vec!["episode".to_string()];
        for k in kinds {
            header.push(format!("liquidity_{}", k.label()));
            header.push(format!("volume_{}", k.label()));
        }
        w.write_record(&header)?;
        for r in records {
            let mut row = vec![r.episode.to_string()];
            for k in kinds {
                row.push(r.cohort_liquidity.get(k).copied().unwrap_or(0.0).to_string());
                row.push(r.cohort_volume.get(k).copied().unwrap_or(0).to_string());
            }
            w.write_record(&row)?;
        }
        Ok(())
    })
}

fn qtable_csv(q: &crate::agents::QTable) -> Result<Vec<u8>> {
    csv_bytes(Path::new("qtable.csv"), |w| {
        w.write_record(["state", "action", "value"])?;
        q.entries()
            .try_for_each(|(s, a, v)| w.write_record([s.to_string(), a.to_string(), v.to_string()]))
    })
}

/// Read `episodes.csv` back into records (cohort maps empty).
pub fn read_episodes(path: &Path) -> Result<Vec<EpisodeRecord>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    let header = rdr.headers().map_err(|e| Error::csv(path, e))?.clone();
    if header.iter().ne(EPISODES_HEADER.iter().copied()) {
        return Err(Error::Format {
            path: path.to_path_buf(),
            message: format!("unexpected header `{}`", header.iter().collect::<Vec<_>>().join(",")),
        });
    }
    rdr.deserialize::<EpisodeRow>()
        .map(|row| row.map(EpisodeRecord::from).map_err(|e| Error::csv(path, e)))
        .collect()
}

pub fn is_complete(dir: &Path) -> bool {
    dir.join(METADATA_FILE).exists()
}

/// Write every output file for `out` into `dir`.
pub fn write_run(dir: &Path, out: &RunOutput) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let cfg = &out.config;
    let _ = fs::remove_file(dir.join(METADATA_FILE));

    write_atomic(&dir.join(EPISODES_FILE), &episodes_csv(&out.records)?)?;
    let rows = metrics::series_rows(&out.records, cfg.smoothing_window);
    write_atomic(&dir.join(SERIES_FILE), &series_csv(&rows)?)?;
    write_atomic(&dir.join(SUMMARY_FILE), &summary_csv(&out.summary)?)?;
    let kinds: Vec<PolicyKind> = cfg.strategy.iter().map(|c| c.0).collect();
    write_atomic(&dir.join(COHORTS_FILE), &cohorts_csv(&out.records, &kinds)?)?;
    if cfg.export_qtables {
        for (kind, q) in &out.qtables {
            write_atomic(&dir.join(format!("qtable_{}.csv", kind.label())), &qtable_csv(q)?)?;
        }
    }
    write_atomic(&dir.join(CONFIG_FILE), cfg.to_text().as_bytes())?;

    let meta = Metadata {
        name: cfg.run_name(),
        version: env!("CARGO_PKG_VERSION"),
        master_seed: cfg.master_seed,
        rng: RNG_ALGORITHM,
        smoothing: metrics::SMOOTHING_ESTIMATOR,
        smoothing_window: cfg.smoothing_window,
        hit_threshold: cfg.hit_threshold,
        parallel_available: Execution::parallel_available(),
        config: cfg,
        provenance: cfg.provenance(),
    };
    let json = serde_json::to_vec_pretty(&meta).expect("metadata serialises");
    write_atomic(&dir.join(METADATA_FILE), &json)
}

/// Simulate `config` and write it to `dir`, refusing to clobber a completed
/// run unless `overwrite`.
pub fn run_to_dir(config: &ExperimentConfig, dir: &Path, overwrite: bool) -> Result<RunOutput> {
    if is_complete(dir) && !overwrite {
        return Err(Error::AlreadyComplete(dir.to_path_buf()));
    }
    let out = simulate(config)?;
    write_run(dir, &out)?;
    Ok(out)
}

/// Recompute `series.csv` and `summary.csv` from an existing `episodes.csv`.
pub fn report(dir: &Path, window: usize, threshold: f64) -> Result<RunSummary> {
    let records = read_episodes(&dir.join(EPISODES_FILE))?;
    let rows = metrics::series_rows(&records, window);
    let summary = metrics::summarize(&records, window, threshold);
    write_atomic(&dir.join(SERIES_FILE), &series_csv(&rows)?)?;
    write_atomic(&dir.join(SUMMARY_FILE), &summary_csv(&summary)?)?;
    Ok(summary)
}

/// Grid of runs sharing one base config.
#[derive(Debug, Clone)]
pub struct SweepPlan {
    pub base: ExperimentConfig,
    pub rules: Vec<ClearingRule>,
    pub strategies: Vec<PolicyKind>,
    pub seeds: Vec<u64>,
}

impl SweepPlan {
    /// Cartesian product rule x strategy x seed. Every strategy sees the
    /// same seeds, so cross-strategy comparisons are paired.
    pub fn configs(&self) -> Vec<ExperimentConfig> {
        let mut out = Vec::new();
        for &rule in &self.rules {
            for &strategy in &self.strategies {
                for &seed in &self.seeds {
                    let mut c = self.base.clone();
                    c.clearing_rule = rule;
                    c.strategy = vec![(strategy, 1)];
                    c.master_seed = seed;
                    out.push(c);
                }
            }
        }
        out
    }
}

#[derive(Debug)]
pub struct RunStatus {
    pub name: String,
    pub dir: PathBuf,
    pub result: std::result::Result<RunSummary, String>,
}

#[derive(Debug)]
pub struct SweepReport {
    pub runs: Vec<RunStatus>,
}

impl SweepReport {
    pub fn failures(&self) -> impl Iterator<Item = &RunStatus> {
        self.runs.iter().filter(|r| r.result.is_err())
    }

    pub fn all_ok(&self) -> bool {
        self.failures().next().is_none()
    }
}

/// Execute every run of `configs` under `root`, one subdirectory each.
/// A failing run is recorded in the manifest and the sweep carries on.
pub fn run_sweep(configs: &[ExperimentConfig], root: &Path, overwrite: bool, exec: Execution) -> Result<SweepReport> {
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let runs = exec::map(exec, configs, |cfg| {
        let name = cfg.run_name();
        let dir = root.join(&name);
        let result = run_to_dir(cfg, &dir, overwrite).map(|o| o.summary).map_err(|e| e.to_string());
        RunStatus { name, dir, result }
    });
    let report = SweepReport { runs };
    let manifest = csv_bytes(Path::new(MANIFEST_FILE), |w| {
        w.write_record(["run", "status", "detail"])?;
        for r in &report.runs {
            match &r.result {
                Ok(_) => w.write_record([r.name.as_str(), "ok", ""])?,
                Err(e) => w.write_record([r.name.as_str(), "failed", e.as_str()])?,
            }
        }
        Ok(())
    })?;
    write_atomic(&root.join(MANIFEST_FILE), &manifest)?;
    Ok(report)
}
