//! Reported series: cumulative liquidity, smoothed share of opening balance
//! cleared, smoothed hit rate, and a per-run summary.
//!
//! Smoothing is a trailing moving average; the first `window - 1` points
//! average over however many episodes exist so far.

use serde::{Deserialize, Serialize};

use crate::agents::PolicyKind;
use crate::environment::EpisodeRecord;

pub const DEFAULT_SMOOTHING_WINDOW: usize = 100;
pub const DEFAULT_HIT_THRESHOLD: f64 = 0.7;
/// Fraction of the run treated as the "tail" in [`RunSummary`].
pub const TAIL_FRACTION: f64 = 0.1;

/// Recorded in run metadata next to the window length.
pub const SMOOTHING_ESTIMATOR: &str = "trailing moving average, partial leading windows";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub episode: u64,
    pub value: f64,
}

pub type Series = Vec<SeriesPoint>;

/// Running total of `G` per episode.
pub fn cumulative_liquidity(records: &[EpisodeRecord]) -> Series {
    let mut total = 0u64;
    records
        .iter()
        .map(|r| {
            total += r.total_cleared;
            SeriesPoint {
                episode: r.episode,
                value: total as f64,
            }
        })
        .collect()
}

/// Running total of one cohort's recorded liquidity (greedy penalty applied).
pub fn cumulative_cohort_liquidity(records: &[EpisodeRecord], cohort: PolicyKind) -> Series {
    let mut total = 0.0;
    records
        .iter()
        .map(|r| {
            total += r.cohort_liquidity.get(&cohort).copied().unwrap_or(0.0);
            SeriesPoint {
                episode: r.episode,
                value: total,
            }
        })
        .collect()
}

/// Trailing moving average over `window` points.
pub fn smooth(raw: &[SeriesPoint], window: usize) -> Series {
    assert!(window >= 1, "smoothing window must be at least 1");
    // Summed afresh per point: a running sum drifts below zero on long runs.
    raw.iter()
        .enumerate()
        .map(|(i, p)| {
            let span = &raw[(i + 1).saturating_sub(window)..=i];
            SeriesPoint {
                episode: p.episode,
                value: span.iter().map(|q| q.value).sum::<f64>() / span.len() as f64,
            }
        })
        .collect()
}

pub fn raw_cleared_fraction(records: &[EpisodeRecord]) -> Series {
    records
        .iter()
        .map(|r| SeriesPoint {
            episode: r.episode,
            value: r.cleared_fraction().expect("episode with zero opening balance"),
        })
        .collect()
}

/// Smoothed share of the episode's opening balances that cleared.
pub fn percent_cleared(records: &[EpisodeRecord], window: usize) -> Series {
    smooth(&raw_cleared_fraction(records), window)
}

/// Per-episode hit rate; episodes with nobody paired are skipped.
pub fn raw_hit_rate(records: &[EpisodeRecord]) -> Series {
    records
        .iter()
        .filter_map(|r| r.hit_rate().map(|value| SeriesPoint { episode: r.episode, value }))
        .collect()
}

pub fn hit_rate(records: &[EpisodeRecord], window: usize) -> Series {
    smooth(&raw_hit_rate(records), window)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub total_liquidity: f64,
    /// Mean raw hit rate over the final 10% of episodes.
    pub mean_hit_rate_tail: f64,
    /// First episode whose smoothed hit rate reaches the threshold.
    pub episodes_to_threshold: Option<u64>,
}

/// First episode at which `series` reaches `threshold`.
pub fn first_crossing(series: &[SeriesPoint], threshold: f64) -> Option<u64> {
    series.iter().find(|p| p.value >= threshold).map(|p| p.episode)
}

/// Mean over the final `fraction` of points (at least one point).
pub fn tail_mean(series: &[SeriesPoint], fraction: f64) -> f64 {
    if series.is_empty() {
        return 0.0;
    }
    let k = ((series.len() as f64 * fraction).ceil() as usize).clamp(1, series.len());
    series[series.len() - k..].iter().map(|p| p.value).sum::<f64>() / k as f64
}

pub fn summarize(records: &[EpisodeRecord], window: usize, threshold: f64) -> RunSummary {
    let total_liquidity = records.iter().map(|r| r.total_cleared as f64).sum();
    let raw_hits = raw_hit_rate(records);
    let smoothed = smooth(&raw_hits, window);
    RunSummary {
        total_liquidity,
        mean_hit_rate_tail: tail_mean(&raw_hits, TAIL_FRACTION),
        episodes_to_threshold: first_crossing(&smoothed, threshold),
    }
}

/// One row of `series.csv`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesRow {
    pub episode: u64,
    pub cum_liquidity: f64,
    pub pct_cleared_smoothed: f64,
    pub hit_rate_smoothed: f64,
}

/// Join the three reported series on episode number.
///
/// Episodes with nobody paired carry the previous smoothed hit rate (0 at
/// the very start) so the table stays rectangular.
pub fn series_rows(records: &[EpisodeRecord], window: usize) -> Vec<SeriesRow> {
    let cum = cumulative_liquidity(records);
    let pct = percent_cleared(records, window);
    let hits = hit_rate(records, window);
    let mut hits = hits.iter().peekable();
    let mut last_hit = 0.0;
    cum.iter()
        .zip(&pct)
        .map(|(c, p)| {
            if let Some(h) = hits.next_if(|h| h.episode == c.episode) {
                last_hit = h.value;
            }
            SeriesRow {
                episode: c.episode,
                cum_liquidity: c.value,
                pct_cleared_smoothed: p.value,
                hit_rate_smoothed: last_hit,
            }
        })
        .collect()
}
