//! Single runs and their artifacts.

use std::collections::BTreeMap;
use std::path::Path;

use log::info;
use pfsim_core::radio::{Outcome, RadioParams};
use pfsim_core::scenario::ScenarioConfig;
use pfsim_core::sim::{self, metrics, RunOutput};
use serde::{Deserialize, Serialize};

use crate::artifacts::{self, EVENTS_FILE, METRICS_FILE, SUMMARY_FILE};
use crate::error::Result;

pub const SUMMARY_SCHEMA_VERSION: u32 = 1;

/// Most coverage samples kept in `summary.json`; `metrics.csv` has them all.
const COVERAGE_POINTS: usize = 500;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoveragePoint {
    pub time_s: f64,
    pub mean: f64,
    pub within: f64,
    pub cross: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatteryStats {
    pub mean_pct: f64,
    pub min_pct: f64,
    pub max_pct: f64,
    pub per_peer_pct: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema_version: u32,
    pub scenario: String,
    pub seed: u64,
    pub ticks: u64,
    pub tick_s: f64,
    pub peers: usize,
    pub obstacles: bool,
    pub sessions_opened: u64,
    /// Closed sessions per outcome.
    pub outcomes: BTreeMap<String, u64>,
    pub messages: u64,
    pub bytes_exchanged: u64,
    pub admissions: u64,
    /// `"inf"` when no community's items reached outsiders, `null` for
    /// single-community scenarios.
    #[serde(with = "flow_ratio_repr")]
    pub flow_ratio: Option<f64>,
    pub relay_reachability: u64,
    pub coverage_curve: Vec<CoveragePoint>,
    pub battery: BatteryStats,
    pub radio: RadioParams,
}

mod flow_ratio_repr {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Number(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            None => s.serialize_none(),
            Some(x) if x.is_infinite() => s.serialize_str("inf"),
            Some(x) => s.serialize_f64(*x),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        match Option::<Repr>::deserialize(d)? {
            None => Ok(None),
            Some(Repr::Number(x)) => Ok(Some(x)),
            Some(Repr::Text(t)) if t == "inf" => Ok(Some(f64::INFINITY)),
            Some(Repr::Text(t)) => Err(serde::de::Error::custom(format!("bad flow ratio `{t}`"))),
        }
    }
}

impl Summary {
    pub fn from_run(out: &RunOutput) -> Self {
        let w = &out.world;
        let c = &w.counters;
        let outcomes = Outcome::ALL.iter().map(|o| (o.as_str().to_string(), c.outcome(*o))).collect();
        let stride = out.metrics.len().div_ceil(COVERAGE_POINTS).max(1);
        let mut coverage_curve: Vec<CoveragePoint> = out
            .metrics
            .iter()
            .enumerate()
            .filter(|(i, _)| (i + 1) % stride == 0 || i + 1 == out.metrics.len())
            .map(|(_, m)| CoveragePoint {
                time_s: m.time_s,
                mean: m.coverage.mean,
                within: m.coverage.within,
                cross: m.coverage.cross,
            })
            .collect();
        coverage_curve.dedup_by(|a, b| a.time_s == b.time_s);
        let per_peer_pct: Vec<f64> = w.peers.iter().map(|p| p.energy.battery_pct).collect();
        let n = per_peer_pct.len().max(1) as f64;
        Summary {
            schema_version: SUMMARY_SCHEMA_VERSION,
            scenario: w.config.name.clone(),
            seed: w.seed,
            ticks: out.metrics.len() as u64,
            tick_s: w.config.tick_s,
            peers: w.peers.len(),
            obstacles: w.config.obstacles,
            sessions_opened: c.sessions_opened,
            outcomes,
            messages: c.messages,
            bytes_exchanged: c.bytes_exchanged,
            admissions: c.admissions,
            flow_ratio: sim::flow_ratio(w).ok(),
            relay_reachability: sim::relay_reachability(w, &out.events),
            coverage_curve,
            battery: BatteryStats {
                mean_pct: per_peer_pct.iter().sum::<f64>() / n,
                min_pct: per_peer_pct.iter().copied().fold(f64::INFINITY, f64::min),
                max_pct: per_peer_pct.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                per_peer_pct,
            },
            radio: w.radio.clone(),
        }
    }

    pub fn success(&self) -> u64 {
        self.outcomes.get(Outcome::Success.as_str()).copied().unwrap_or(0)
    }
}

#[derive(Debug, Clone)]
pub struct SimulateOptions {
    pub seed: u64,
    /// Overrides the scenario duration.
    pub ticks: Option<u64>,
    pub plots: bool,
}

/// Runs `config` and writes `metrics.csv`, `events.jsonl` (unless disabled
/// in the scenario) and `summary.json` into `out_dir`.
pub fn simulate(config: &ScenarioConfig, opts: &SimulateOptions, out_dir: &Path) -> Result<Summary> {
    artifacts::ensure_dir(out_dir)?;
    let ticks = opts.ticks.unwrap_or_else(|| config.ticks());
    info!("simulating `{}` seed {} for {} ticks", config.name, opts.seed, ticks);
    let out = sim::run_ticks(config, opts.seed, ticks)?;
    let summary = Summary::from_run(&out);

    artifacts::write_atomic(&out_dir.join(METRICS_FILE), |w| metrics::write_csv(&out.metrics, w))?;
    if config.output.events {
        artifacts::write_atomic(&out_dir.join(EVENTS_FILE), |w| out.events.write_jsonl(w))?;
    }
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    artifacts::write_text(&out_dir.join(SUMMARY_FILE), &(json + "\n"))?;
    info!(
        "{} sessions, {} successful, {} bytes exchanged",
        summary.sessions_opened,
        summary.success(),
        summary.bytes_exchanged
    );

    if opts.plots {
        crate::report::report(&[out_dir.to_path_buf()])?;
    }
    Ok(summary)
}
