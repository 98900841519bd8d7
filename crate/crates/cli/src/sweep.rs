//! Parameter sweeps: every grid point × every seed, run in parallel.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::ops::Range;
use std::path::Path;

use log::info;
use pfsim_core::scenario::{self, ScenarioConfig};
use pfsim_core::sim;
use rayon::prelude::*;
use serde_json::Value;

use crate::artifacts;
use crate::error::{CliError, Result};
use crate::simulate::Summary;

pub const SWEEP_FILE: &str = "sweep.csv";

const SUMMARY_COLUMNS: [&str; 15] = [
    "seed",
    "sessions_opened",
    "success",
    "failed_range",
    "failed_dwell",
    "failed_probabilistic",
    "messages",
    "bytes_exchanged",
    "admissions",
    "coverage_mean",
    "coverage_within",
    "coverage_cross",
    "flow_ratio",
    "relay_reachability",
    "battery_mean_pct",
];

/// Dotted config path → values to try. Keys iterate in sorted order.
pub type Grid = BTreeMap<String, Vec<Value>>;

/// Parses `a..b` (half-open), `a..=b` or a single seed.
pub fn parse_seeds(text: &str) -> Result<Range<u64>> {
    let bad = || CliError::Seeds(text.to_string());
    let num = |s: &str| s.trim().parse::<u64>().map_err(|_| bad());
    if let Some((a, b)) = text.split_once("..=") {
        let (a, b) = (num(a)?, num(b)?);
        return if a <= b { Ok(a..b + 1) } else { Err(bad()) };
    }
    if let Some((a, b)) = text.split_once("..") {
        let (a, b) = (num(a)?, num(b)?);
        return if a <= b { Ok(a..b) } else { Err(bad()) };
    }
    let a = num(text)?;
    Ok(a..a + 1)
}

/// Reads a grid from inline JSON or from a file holding it.
pub fn load_grid(source: &str) -> Result<Grid> {
    let text = if source.trim_start().starts_with('{') {
        source.to_string()
    } else {
        artifacts::read_text(Path::new(source))?
    };
    let value: Value = serde_json::from_str(&text).map_err(|e| CliError::Grid(e.to_string()))?;
    let Value::Object(map) = value else {
        return Err(CliError::Grid("expected an object of `key: [values]`".into()));
    };
    let mut grid = Grid::new();
    for (key, values) in map {
        match values {
            Value::Array(v) if !v.is_empty() => {
                grid.insert(key, v);
            }
            _ => return Err(CliError::Grid(format!("`{key}` must map to a non-empty array"))),
        }
    }
    Ok(grid)
}

/// All combinations of grid values, first key varying slowest. An empty grid
/// has exactly one point with no overrides.
pub fn grid_points(grid: &Grid) -> Vec<Vec<(String, Value)>> {
    let mut points = vec![Vec::new()];
    for (key, values) in grid {
        points = points
            .into_iter()
            .flat_map(|p| {
                values.iter().map(move |v| {
                    let mut q = p.clone();
                    q.push((key.clone(), v.clone()));
                    q
                })
            })
            .collect();
    }
    points
}

/// Returns `config` with the dotted `key` set to `value`, revalidated.
pub fn with_override(config: &ScenarioConfig, key: &str, value: &Value) -> Result<ScenarioConfig> {
    let mut doc = serde_json::to_value(config).expect("scenario serializes");
    let mut slot = &mut doc;
    for part in key.split('.') {
        slot = match slot {
            Value::Object(map) if map.contains_key(part) => map.get_mut(part).unwrap(),
            _ => return Err(CliError::Grid(format!("`{key}` is not a scenario key"))),
        };
    }
    *slot = value.clone();
    Ok(scenario::from_value(doc)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub point: Vec<(String, Value)>,
    pub seed: u64,
    pub summary: Summary,
    pub coverage: sim::CoverageStats,
}

pub fn sweep(config: &ScenarioConfig, grid: &Grid, seeds: Range<u64>, ticks: Option<u64>) -> Result<Vec<SweepRow>> {
    let mut jobs = Vec::new();
    for point in grid_points(grid) {
        let mut c = config.clone();
        for (key, value) in &point {
            c = with_override(&c, key, value)?;
        }
        for seed in seeds.clone() {
            jobs.push((point.clone(), c.clone(), seed));
        }
    }
    info!("sweeping {} runs", jobs.len());
    // par_iter keeps input order, so rows come out sorted by (point, seed)
    jobs.into_par_iter()
        .map(|(point, c, seed)| {
            let out = sim::run_ticks(&c, seed, ticks.unwrap_or_else(|| c.ticks()))?;
            let coverage = out.metrics.last().map(|m| m.coverage).unwrap_or_default();
            Ok(SweepRow { point, seed, summary: Summary::from_run(&out), coverage })
        })
        .collect()
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn rows_to_csv(grid: &Grid, rows: &[SweepRow]) -> String {
    let mut out = String::new();
    let header: Vec<String> =
        grid.keys().map(|k| csv_field(k)).chain(SUMMARY_COLUMNS.iter().map(|c| c.to_string())).collect();
    out.push_str(&header.join(","));
    out.push('\n');
    for r in rows {
        for (_, v) in &r.point {
            let text = match v {
                Value::String(s) => s.clone(),
                other => other.to_string(),
            };
            let _ = write!(out, "{},", csv_field(&text));
        }
        let s = &r.summary;
        let o = |k: &str| s.outcomes.get(k).copied().unwrap_or(0);
        let flow = match s.flow_ratio {
            None => String::new(),
            Some(x) if x.is_infinite() => "inf".into(),
            Some(x) => format!("{x:.6}"),
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{:.6},{:.6},{:.6},{},{},{:.6}",
            r.seed,
            s.sessions_opened,
            o("success"),
            o("failed_range"),
            o("failed_dwell"),
            o("failed_probabilistic"),
            s.messages,
            s.bytes_exchanged,
            s.admissions,
            r.coverage.mean,
            r.coverage.within,
            r.coverage.cross,
            flow,
            s.relay_reachability,
            s.battery.mean_pct,
        );
    }
    out
}

pub fn write_sweep(out_dir: &Path, grid: &Grid, rows: &[SweepRow]) -> Result<()> {
    artifacts::ensure_dir(out_dir)?;
    artifacts::write_text(&out_dir.join(SWEEP_FILE), &rows_to_csv(grid, rows))
}
