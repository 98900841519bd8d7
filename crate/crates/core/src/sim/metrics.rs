use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::radio::Outcome;

/// Bumped whenever a column is added, removed or reinterpreted.
pub const METRICS_SCHEMA_VERSION: u32 = 1;

pub const METRICS_COLUMNS: [&str; 20] = [
    "tick",
    "time_s",
    "contacts_open",
    "sessions_open",
    "sessions_opened",
    "success",
    "failed_range",
    "failed_dwell",
    "failed_probabilistic",
    "messages",
    "bytes_exchanged",
    "admissions",
    "battery_mean_pct",
    "battery_min_pct",
    "battery_max_pct",
    "coverage_mean",
    "coverage_within",
    "coverage_cross",
    "nbhd_entries_mean",
    "store_fill_mean",
];

/// Monotone counters of a run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub sessions_opened: u64,
    pub success: u64,
    pub failed_range: u64,
    pub failed_dwell: u64,
    pub failed_probabilistic: u64,
    pub messages: u64,
    pub bytes_exchanged: u64,
    pub admissions: u64,
}

impl Counters {
    pub fn record_outcome(&mut self, outcome: Outcome) {
        match outcome {
            Outcome::Success => self.success += 1,
            Outcome::FailedRange => self.failed_range += 1,
            Outcome::FailedDwell => self.failed_dwell += 1,
            Outcome::FailedProbabilistic => self.failed_probabilistic += 1,
        }
    }

    pub fn outcome(&self, outcome: Outcome) -> u64 {
        match outcome {
            Outcome::Success => self.success,
            Outcome::FailedRange => self.failed_range,
            Outcome::FailedDwell => self.failed_dwell,
            Outcome::FailedProbabilistic => self.failed_probabilistic,
        }
    }

    /// True when every counter in `self` is at least the one in `earlier`.
    pub fn dominates(&self, earlier: &Counters) -> bool {
        self.sessions_opened >= earlier.sessions_opened
            && self.success >= earlier.success
            && self.failed_range >= earlier.failed_range
            && self.failed_dwell >= earlier.failed_dwell
            && self.failed_probabilistic >= earlier.failed_probabilistic
            && self.messages >= earlier.messages
            && self.bytes_exchanged >= earlier.bytes_exchanged
            && self.admissions >= earlier.admissions
    }
}

/// Coverage of community-origin items, see [`super::analysis`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CoverageStats {
    pub mean: f64,
    pub within: f64,
    pub cross: f64,
}

/// State of the world after one tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub tick: u64,
    pub time_s: f64,
    pub contacts_open: usize,
    pub sessions_open: usize,
    pub counters: Counters,
    /// Battery level of every peer, in peer order.
    pub battery_pct: Vec<f64>,
    pub coverage: CoverageStats,
    pub nbhd_entries_mean: f64,
    pub store_fill_mean: f64,
}

impl MetricsRecord {
    pub fn battery_mean(&self) -> f64 {
        if self.battery_pct.is_empty() {
            return 0.0;
        }
        self.battery_pct.iter().sum::<f64>() / self.battery_pct.len() as f64
    }

    pub fn battery_min(&self) -> f64 {
        self.battery_pct.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn battery_max(&self) -> f64 {
        self.battery_pct.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

pub fn write_csv<W: Write>(records: &[MetricsRecord], mut out: W) -> io::Result<()> {
    writeln!(out, "# pfsim metrics v{METRICS_SCHEMA_VERSION}")?;
    writeln!(out, "{}", METRICS_COLUMNS.join(","))?;
    for r in records {
        let c = &r.counters;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.3},{:.3}",
            r.tick,
            r.time_s,
            r.contacts_open,
            r.sessions_open,
            c.sessions_opened,
            c.success,
            c.failed_range,
            c.failed_dwell,
            c.failed_probabilistic,
            c.messages,
            c.bytes_exchanged,
            c.admissions,
            r.battery_mean(),
            r.battery_min(),
            r.battery_max(),
            r.coverage.mean,
            r.coverage.within,
            r.coverage.cross,
            r.nbhd_entries_mean,
            r.store_fill_mean,
        )?;
    }
    Ok(())
}
