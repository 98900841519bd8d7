//! Scenario description, validation and the built-in presets.
//!
//! Scenarios are JSON documents. Every key is optional and unknown keys are
//! rejected; see `docs/scenario.md` for the full schema.

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::mobility::{Area, GatheringParams, MobilityModel, MobilityParams, Position, TransitParams};
use crate::prefs;
use crate::radio::{RadioParams, SuccessAnchor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub name: String,
    pub area: AreaConfig,
    pub peers: usize,
    pub communities: CommunitySpec,
    pub mobility: MobilityConfig,
    /// Explicit starting states for the first peers; the rest are spawned
    /// by the mobility model.
    pub placements: Vec<Placement>,
    pub radio: RadioConfig,
    pub filter: FilterConfig,
    pub duration_s: f64,
    pub tick_s: f64,
    pub obstacles: bool,
    /// Indices of peers whose sharing is switched off.
    pub sharing_disabled: Vec<usize>,
    pub output: OutputConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            name: "custom".into(),
            area: AreaConfig::default(),
            peers: 50,
            communities: CommunitySpec::default(),
            mobility: MobilityConfig::default(),
            placements: Vec::new(),
            radio: RadioConfig::default(),
            filter: FilterConfig::default(),
            duration_s: 3600.0,
            tick_s: 1.0,
            obstacles: false,
            sharing_disabled: Vec::new(),
            output: OutputConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AreaConfig {
    pub width: f64,
    pub height: f64,
}

impl Default for AreaConfig {
    fn default() -> Self {
        Self { width: 200.0, height: 200.0 }
    }
}

/// How peers are split into communities and what they rate.
///
/// Peer `i` belongs to community `i % count`. Each community owns a pool of
/// `items_per_community` items its members rate around `affinity` stars.
/// Optionally all communities also rate from a pool of `shared_items`, where
/// community `c` likes item `j` iff `(j + c)` is even.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CommunitySpec {
    pub count: usize,
    pub items_per_community: usize,
    pub ratings_per_peer: usize,
    pub shared_items: usize,
    pub shared_ratings_per_peer: usize,
    pub affinity: f64,
    pub noise: f64,
}

impl Default for CommunitySpec {
    fn default() -> Self {
        Self {
            count: 1,
            items_per_community: 40,
            ratings_per_peer: 10,
            shared_items: 0,
            shared_ratings_per_peer: 0,
            affinity: 4.3,
            noise: 0.7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MobilityConfig {
    pub model: MobilityModel,
    pub v_min: f64,
    pub v_max: f64,
    pub pause_max_s: f64,
    pub pois: Vec<[f64; 2]>,
    pub mean_dwell_s: f64,
    pub min_dwell_s: f64,
    pub seat_radius_m: f64,
    pub transit: Option<TransitConfig>,
}

impl Default for MobilityConfig {
    fn default() -> Self {
        Self {
            model: MobilityModel::RandomWaypoint,
            v_min: 0.5,
            v_max: 1.5,
            pause_max_s: 120.0,
            pois: Vec::new(),
            mean_dwell_s: 300.0,
            min_dwell_s: 0.0,
            seat_radius_m: 2.0,
            transit: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransitConfig {
    pub start: [f64; 2],
    pub end: [f64; 2],
    pub ride_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Placement {
    pub position: [f64; 2],
    /// First waypoint; defaults to the position itself.
    #[serde(default)]
    pub waypoint: Option<[f64; 2]>,
    #[serde(default)]
    pub speed: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RadioConfig {
    pub anchors: Option<Vec<AnchorConfig>>,
    pub delay_min_s: Option<f64>,
    pub delay_max_s: Option<f64>,
    pub drain_sharing_on: Option<f64>,
    pub drain_sharing_off: Option<f64>,
    pub effective_radius_m: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnchorConfig {
    pub distance_m: f64,
    pub p_clear: f64,
    #[serde(default)]
    pub p_obstacles: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterConfig {
    pub k: usize,
    pub capacity: usize,
    pub n_draws: usize,
    pub min_overlap: usize,
    pub share_fraction: f64,
    pub top_n: usize,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            k: prefs::DEFAULT_K,
            capacity: prefs::DEFAULT_CAPACITY,
            n_draws: prefs::DEFAULT_N_DRAWS,
            min_overlap: prefs::DEFAULT_MIN_OVERLAP,
            share_fraction: 1.0,
            top_n: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub events: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { events: true }
    }
}

/// One violated constraint, named by its dotted key path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfigIssue {
    pub key: String,
    pub constraint: String,
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "`{}`: {}", self.key, self.constraint)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScenarioError {
    #[error("`{key}`: {message}")]
    Parse { key: String, message: String },
    #[error("invalid scenario: {}", .0.iter().map(|i| i.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<ConfigIssue>),
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
}

impl ScenarioError {
    /// Key paths named by this error.
    pub fn keys(&self) -> Vec<&str> {
        match self {
            ScenarioError::Parse { key, .. } => vec![key.as_str()],
            ScenarioError::Invalid(issues) => issues.iter().map(|i| i.key.as_str()).collect(),
            ScenarioError::UnknownPreset(_) => vec![],
        }
    }
}

/// Parses and validates a scenario document.
pub fn validate(text: &str) -> Result<ScenarioConfig, ScenarioError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let config: ScenarioConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let key = e.path().to_string();
        let inner = e.into_inner();
        // serde reports the offending name for unknown fields in the message
        let message = inner.to_string();
        ScenarioError::Parse { key: if key == "." { "<root>".into() } else { key }, message }
    })?;
    config.check()?;
    Ok(config)
}

/// Parses a scenario from an already-built JSON value.
pub fn from_value(value: Value) -> Result<ScenarioConfig, ScenarioError> {
    validate(&value.to_string())
}

impl ScenarioConfig {
    pub fn check(&self) -> Result<(), ScenarioError> {
        let mut issues = Vec::new();
        let mut bad = |key: &str, constraint: &str| {
            issues.push(ConfigIssue { key: key.to_string(), constraint: constraint.to_string() })
        };
        let positive = |v: f64| v.is_finite() && v > 0.0;
        let non_negative = |v: f64| v.is_finite() && v >= 0.0;

        if !positive(self.area.width) {
            bad("area.width", "must be > 0");
        }
        if !positive(self.area.height) {
            bad("area.height", "must be > 0");
        }
        if self.peers == 0 {
            bad("peers", "must be >= 1");
        }
        if !positive(self.duration_s) {
            bad("duration_s", "must be > 0");
        }
        if !positive(self.tick_s) {
            bad("tick_s", "must be > 0");
        }

        let c = &self.communities;
        if c.count == 0 {
            bad("communities.count", "must be >= 1");
        } else if self.peers < c.count {
            bad("communities.count", "every community needs at least one peer (count <= peers)");
        }
        if c.count > 99 {
            bad("communities.count", "must be <= 99");
        }
        if c.items_per_community == 0 {
            bad("communities.items_per_community", "must be >= 1");
        }
        if c.items_per_community > 99_999 || c.shared_items > 99_999 {
            bad("communities.items_per_community", "item pools are limited to 99999 items");
        }
        if c.ratings_per_peer == 0 {
            bad("communities.ratings_per_peer", "must be >= 1");
        }
        if c.ratings_per_peer > c.items_per_community {
            bad("communities.ratings_per_peer", "must be <= items_per_community");
        }
        if c.shared_ratings_per_peer > c.shared_items {
            bad("communities.shared_ratings_per_peer", "must be <= shared_items");
        }
        if !(1.0..=5.0).contains(&c.affinity) {
            bad("communities.affinity", "must be in [1, 5]");
        }
        if !non_negative(c.noise) {
            bad("communities.noise", "must be >= 0");
        }

        let m = &self.mobility;
        if !non_negative(m.v_min) {
            bad("mobility.v_min", "must be >= 0");
        }
        if !(m.v_max.is_finite() && m.v_max >= m.v_min) {
            bad("mobility.v_max", "must be >= v_min");
        }
        if !non_negative(m.pause_max_s) {
            bad("mobility.pause_max_s", "must be >= 0");
        }
        if !non_negative(m.mean_dwell_s) {
            bad("mobility.mean_dwell_s", "must be >= 0");
        }
        if !non_negative(m.min_dwell_s) {
            bad("mobility.min_dwell_s", "must be >= 0");
        }
        if !non_negative(m.seat_radius_m) {
            bad("mobility.seat_radius_m", "must be >= 0");
        }
        let inside = |p: &[f64; 2]| {
            p[0].is_finite()
                && p[1].is_finite()
                && (0.0..=self.area.width).contains(&p[0])
                && (0.0..=self.area.height).contains(&p[1])
        };
        for (i, p) in m.pois.iter().enumerate() {
            if !inside(p) {
                bad(&format!("mobility.pois[{i}]"), "must lie inside the area");
            }
        }
        match m.model {
            MobilityModel::Gathering if m.pois.is_empty() => {
                bad("mobility.pois", "gathering needs at least one point of interest")
            }
            MobilityModel::TransitLine => match &m.transit {
                None => bad("mobility.transit", "transit_line needs a line"),
                Some(t) => {
                    if !inside(&t.start) {
                        bad("mobility.transit.start", "must lie inside the area");
                    }
                    if !inside(&t.end) {
                        bad("mobility.transit.end", "must lie inside the area");
                    }
                    if !positive(t.ride_s) {
                        bad("mobility.transit.ride_s", "must be > 0");
                    }
                }
            },
            _ => {}
        }

        if self.placements.len() > self.peers {
            bad("placements", "more placements than peers");
        }
        for (i, p) in self.placements.iter().enumerate() {
            if !inside(&p.position) {
                bad(&format!("placements[{i}].position"), "must lie inside the area");
            }
            if let Some(w) = &p.waypoint {
                if !inside(w) {
                    bad(&format!("placements[{i}].waypoint"), "must lie inside the area");
                }
            }
            if let Some(s) = p.speed {
                if !non_negative(s) {
                    bad(&format!("placements[{i}].speed"), "must be >= 0");
                }
            }
        }

        if let Some(anchors) = &self.radio.anchors {
            if anchors.is_empty() {
                bad("radio.anchors", "must not be empty");
            }
            if self.obstacles {
                for (i, a) in anchors.iter().enumerate() {
                    if a.p_obstacles.is_none() {
                        bad(&format!("radio.anchors[{i}].p_obstacles"), "required when obstacles is true");
                    }
                }
            }
        }
        let radio = self.radio_params();
        if let Err(e) = radio.validate() {
            let key = match e {
                crate::radio::RadioError::NoAnchors
                | crate::radio::RadioError::UnsortedAnchors
                | crate::radio::RadioError::BadProbability => "radio.anchors",
                crate::radio::RadioError::BadDelay => "radio.delay_min_s",
                crate::radio::RadioError::BadDrain => "radio.drain_sharing_on",
                crate::radio::RadioError::BadRadius => "radio.effective_radius_m",
            };
            bad(key, &e.to_string());
        }

        let f = &self.filter;
        if f.k == 0 {
            bad("filter.k", "must be >= 1");
        }
        if f.capacity == 0 {
            bad("filter.capacity", "must be >= 1");
        }
        if f.n_draws == 0 {
            bad("filter.n_draws", "must be >= 1");
        }
        if f.min_overlap == 0 {
            bad("filter.min_overlap", "must be >= 1");
        }
        if !(0.0..=1.0).contains(&f.share_fraction) {
            bad("filter.share_fraction", "must be in [0, 1]");
        }
        if f.top_n == 0 {
            bad("filter.top_n", "must be >= 1");
        }

        for (i, &p) in self.sharing_disabled.iter().enumerate() {
            if p >= self.peers {
                bad(&format!("sharing_disabled[{i}]"), "peer index out of range");
            }
        }

        if issues.is_empty() {
            Ok(())
        } else {
            Err(ScenarioError::Invalid(issues))
        }
    }

    /// Radio model with this scenario's overrides applied to the measured
    /// defaults. Anchors without an obstacle column reuse the clear value.
    pub fn radio_params(&self) -> RadioParams {
        let mut p = RadioParams::default();
        let r = &self.radio;
        if let Some(anchors) = &r.anchors {
            p.anchors = anchors
                .iter()
                .map(|a| SuccessAnchor {
                    distance_m: a.distance_m,
                    p_clear: a.p_clear,
                    p_obstacles: a.p_obstacles.unwrap_or(a.p_clear),
                })
                .collect();
        }
        if let Some(v) = r.delay_min_s {
            p.delay_min_s = v;
        }
        if let Some(v) = r.delay_max_s {
            p.delay_max_s = v;
        }
        if let Some(v) = r.drain_sharing_on {
            p.drain_sharing_on = v;
        }
        if let Some(v) = r.drain_sharing_off {
            p.drain_sharing_off = v;
        }
        if let Some(v) = r.effective_radius_m {
            p.effective_radius_m = v;
        }
        p
    }

    pub fn mobility_params(&self) -> MobilityParams {
        let m = &self.mobility;
        let pos = |p: [f64; 2]| Position::new(p[0], p[1]);
        MobilityParams {
            area: Area { width: self.area.width, height: self.area.height },
            v_min: m.v_min,
            v_max: m.v_max,
            pause_max_s: m.pause_max_s,
            gathering: (!m.pois.is_empty()).then(|| GatheringParams {
                pois: m.pois.iter().copied().map(pos).collect(),
                mean_dwell_s: m.mean_dwell_s,
                min_dwell_s: m.min_dwell_s,
                seat_radius_m: m.seat_radius_m,
            }),
            transit: m.transit.map(|t| TransitParams { start: pos(t.start), end: pos(t.end), ride_s: t.ride_s }),
        }
    }

    pub fn ticks(&self) -> u64 {
        (self.duration_s / self.tick_s - 1e-9).ceil().max(0.0) as u64
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }
}

pub const PRESETS: [&str; 6] = ["bulk-1000", "four-device", "transit", "pedestrian-pass", "cafe", "two-communities"];

/// Built-in scenario by name.
pub fn preset(name: &str) -> Result<ScenarioConfig, ScenarioError> {
    let value = match name {
        // one peer carrying 1000 ratings meets another at 1 m
        "bulk-1000" => json!({
            "name": "bulk-1000",
            "area": {"width": 20.0, "height": 20.0},
            "peers": 2,
            "communities": {"count": 1, "items_per_community": 1000, "ratings_per_peer": 1000},
            "mobility": {"v_min": 0.0, "v_max": 0.0, "pause_max_s": 0.0},
            "placements": [{"position": [10.0, 10.0]}, {"position": [11.0, 10.0]}],
            "filter": {"capacity": 1000, "n_draws": 1000},
            "duration_s": 120.0
        }),
        // four phones on a table, mutually disjoint ratings
        "four-device" => json!({
            "name": "four-device",
            "area": {"width": 20.0, "height": 20.0},
            "peers": 4,
            "communities": {"count": 4, "items_per_community": 25, "ratings_per_peer": 25},
            "mobility": {"v_min": 0.0, "v_max": 0.0, "pause_max_s": 0.0},
            "placements": [
                {"position": [10.0, 10.0]}, {"position": [11.0, 10.0]},
                {"position": [10.0, 11.0]}, {"position": [11.0, 11.0]}
            ],
            "duration_s": 600.0
        }),
        // three riders share a bus for ten minutes, then get off and roam
        "transit" => json!({
            "name": "transit",
            "area": {"width": 3200.0, "height": 200.0},
            "peers": 3,
            "communities": {"count": 1, "items_per_community": 60, "ratings_per_peer": 20},
            "mobility": {
                "model": "transit_line",
                "transit": {"start": [100.0, 100.0], "end": [3100.0, 100.0], "ride_s": 600.0}
            },
            "obstacles": true,
            "duration_s": 900.0
        }),
        // two pedestrians walking past each other at 1.4 m/s
        "pedestrian-pass" => json!({
            "name": "pedestrian-pass",
            "area": {"width": 200.0, "height": 200.0},
            "peers": 2,
            "communities": {"count": 1, "items_per_community": 40, "ratings_per_peer": 20},
            "mobility": {"v_min": 1.4, "v_max": 1.4, "pause_max_s": 120.0},
            "placements": [
                {"position": [30.0, 100.0], "waypoint": [170.0, 100.0], "speed": 1.4},
                {"position": [170.0, 101.0], "waypoint": [30.0, 101.0], "speed": 1.4}
            ],
            "duration_s": 90.0
        }),
        // two guests at the same cafe, each staying at least two minutes
        "cafe" => json!({
            "name": "cafe",
            "area": {"width": 100.0, "height": 100.0},
            "peers": 2,
            "communities": {"count": 1, "items_per_community": 40, "ratings_per_peer": 20},
            "mobility": {
                "model": "gathering",
                "v_min": 0.5, "v_max": 1.5,
                "pois": [[50.0, 50.0]],
                "min_dwell_s": 120.0, "mean_dwell_s": 600.0, "seat_radius_m": 1.5
            },
            "duration_s": 600.0
        }),
        // two taste communities mixing across the points of interest of a
        // 500 m x 500 m district
        "two-communities" => json!({
            "name": "two-communities",
            "area": {"width": 500.0, "height": 500.0},
            "peers": 40,
            "communities": {
                "count": 2, "items_per_community": 60, "ratings_per_peer": 12,
                "shared_items": 20, "shared_ratings_per_peer": 10
            },
            "mobility": {
                "model": "gathering",
                "v_min": 0.5, "v_max": 1.5,
                "pois": [
                    [50.0, 50.0], [250.0, 50.0], [450.0, 50.0],
                    [50.0, 250.0], [250.0, 250.0], [450.0, 250.0],
                    [50.0, 450.0], [250.0, 450.0], [450.0, 450.0]
                ],
                "mean_dwell_s": 600.0, "min_dwell_s": 60.0, "seat_radius_m": 3.0
            },
            "filter": {"k": 5, "capacity": 200, "n_draws": 300},
            "duration_s": 7200.0
        }),
        other => return Err(ScenarioError::UnknownPreset(other.to_string())),
    };
    from_value(value)
}
