//! Link model calibrated from field measurements of phone-to-phone
//! connections: range-dependent success, initial connection delay, the
//! per-encounter session state machine and pre-connection battery drain.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prefs::PeerId;

/// Measured success rate at a distance, without and with obstacles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuccessAnchor {
    pub distance_m: f64,
    pub p_clear: f64,
    pub p_obstacles: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadioParams {
    pub anchors: Vec<SuccessAnchor>,
    pub delay_min_s: f64,
    pub delay_max_s: f64,
    /// Battery drain in percent per hour while advertising and discovering.
    pub drain_sharing_on: f64,
    pub drain_sharing_off: f64,
    /// Distance within which two peers count as in range.
    pub effective_radius_m: f64,
}

impl Default for RadioParams {
    fn default() -> Self {
        Self {
            anchors: vec![
                SuccessAnchor { distance_m: 3.0, p_clear: 1.00, p_obstacles: 1.00 },
                SuccessAnchor { distance_m: 6.0, p_clear: 0.80, p_obstacles: 0.70 },
                SuccessAnchor { distance_m: 10.0, p_clear: 0.20, p_obstacles: 0.00 },
                SuccessAnchor { distance_m: 12.0, p_clear: 0.00, p_obstacles: 0.00 },
            ],
            delay_min_s: 11.0,
            delay_max_s: 41.0,
            drain_sharing_on: 5.77,
            drain_sharing_off: 0.50,
            effective_radius_m: 6.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RadioError {
    #[error("at least one success anchor is required")]
    NoAnchors,
    #[error("anchors must be sorted by strictly increasing non-negative distance")]
    UnsortedAnchors,
    #[error("anchor probabilities must lie in [0, 1] and not increase with distance")]
    BadProbability,
    #[error("delay bounds must satisfy 0 <= min <= max")]
    BadDelay,
    #[error("drain rates must be non-negative")]
    BadDrain,
    #[error("effective radius must be positive")]
    BadRadius,
}

impl RadioParams {
    pub fn validate(&self) -> Result<(), RadioError> {
        if self.anchors.is_empty() {
            return Err(RadioError::NoAnchors);
        }
        let mut prev: Option<&SuccessAnchor> = None;
        for a in &self.anchors {
            if !(a.distance_m >= 0.0 && a.distance_m.is_finite()) {
                return Err(RadioError::UnsortedAnchors);
            }
            for p in [a.p_clear, a.p_obstacles] {
                if !(0.0..=1.0).contains(&p) {
                    return Err(RadioError::BadProbability);
                }
            }
            if let Some(b) = prev {
                if a.distance_m <= b.distance_m {
                    return Err(RadioError::UnsortedAnchors);
                }
                if a.p_clear > b.p_clear || a.p_obstacles > b.p_obstacles {
                    return Err(RadioError::BadProbability);
                }
            }
            prev = Some(a);
        }
        if !(self.delay_min_s >= 0.0 && self.delay_min_s <= self.delay_max_s && self.delay_max_s.is_finite()) {
            return Err(RadioError::BadDelay);
        }
        if !(self.drain_sharing_on >= 0.0 && self.drain_sharing_off >= 0.0) {
            return Err(RadioError::BadDrain);
        }
        if !(self.effective_radius_m > 0.0 && self.effective_radius_m.is_finite()) {
            return Err(RadioError::BadRadius);
        }
        Ok(())
    }
}

/// Piecewise-linear interpolation through the anchors, clamped to the first
/// anchor's probability below it and the last anchor's above it.
pub fn success_probability(distance_m: f64, obstacles: bool, params: &RadioParams) -> f64 {
    let p = |a: &SuccessAnchor| if obstacles { a.p_obstacles } else { a.p_clear };
    let anchors = &params.anchors;
    let (Some(first), Some(last)) = (anchors.first(), anchors.last()) else {
        return 0.0;
    };
    if distance_m <= first.distance_m {
        return p(first);
    }
    if distance_m >= last.distance_m {
        return p(last);
    }
    for w in anchors.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        if distance_m == b.distance_m {
            return p(b);
        }
        if distance_m < b.distance_m {
            let t = (distance_m - a.distance_m) / (b.distance_m - a.distance_m);
            return p(a) + t * (p(b) - p(a));
        }
    }
    p(last)
}

/// Initial connection delay, uniform on `[delay_min_s, delay_max_s]`.
pub fn sample_delay<R: Rng + ?Sized>(params: &RadioParams, rng: &mut R) -> f64 {
    if params.delay_max_s <= params.delay_min_s {
        return params.delay_min_s;
    }
    rng.random_range(params.delay_min_s..=params.delay_max_s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Success,
    /// First contact happened where the link cannot succeed at all.
    FailedRange,
    /// The peers parted before the connection was established.
    FailedDwell,
    /// The range-dependent success draw failed.
    FailedProbabilistic,
}

impl Outcome {
    pub const ALL: [Outcome; 4] =
        [Outcome::Success, Outcome::FailedRange, Outcome::FailedDwell, Outcome::FailedProbabilistic];

    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Success => "success",
            Outcome::FailedRange => "failed_range",
            Outcome::FailedDwell => "failed_dwell",
            Outcome::FailedProbabilistic => "failed_probabilistic",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SessionState {
    Idle,
    Connecting { remaining_s: f64 },
    Exchanging,
    Closed(Outcome),
}

/// One encounter between two peers, from first contact to teardown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkSession {
    pub peers: (PeerId, PeerId),
    pub state: SessionState,
    /// Distance at first contact; the success draw is made against it.
    pub contact_distance_m: f64,
    pub obstacles: bool,
}

impl LinkSession {
    pub fn new(a: PeerId, b: PeerId, contact_distance_m: f64, obstacles: bool) -> Self {
        Self { peers: (a, b), state: SessionState::Idle, contact_distance_m, obstacles }
    }

    pub fn is_closed(&self) -> bool {
        matches!(self.state, SessionState::Closed(_))
    }

    pub fn outcome(&self) -> Option<Outcome> {
        match self.state {
            SessionState::Closed(o) => Some(o),
            _ => None,
        }
    }
}

/// Advances a session by `dt_s` seconds.
///
/// * `Idle` and in range: one success draw at the contact distance. A failed
///   draw closes the session (`FailedRange` when the probability is zero,
///   `FailedProbabilistic` otherwise); a passing one starts `Connecting`
///   with a freshly sampled delay.
/// * `Connecting`: out of range closes with `FailedDwell`; otherwise the
///   delay counts down and the session moves to `Exchanging` once the
///   remaining delay fits in this step.
/// * `Exchanging` closes with `Success` on the next step.
/// * `Closed` is absorbing.
pub fn step_session<R: Rng + ?Sized>(
    session: &LinkSession,
    dt_s: f64,
    in_range: bool,
    params: &RadioParams,
    rng: &mut R,
) -> LinkSession {
    debug_assert!(dt_s > 0.0);
    let state = match session.state {
        SessionState::Idle if in_range => {
            let p = success_probability(session.contact_distance_m, session.obstacles, params);
            if p <= 0.0 {
                SessionState::Closed(Outcome::FailedRange)
            } else if p < 1.0 && rng.random::<f64>() >= p {
                SessionState::Closed(Outcome::FailedProbabilistic)
            } else {
                SessionState::Connecting { remaining_s: sample_delay(params, rng) }
            }
        }
        SessionState::Idle => SessionState::Idle,
        SessionState::Connecting { .. } if !in_range => SessionState::Closed(Outcome::FailedDwell),
        SessionState::Connecting { remaining_s } if remaining_s <= dt_s => SessionState::Exchanging,
        SessionState::Connecting { remaining_s } => SessionState::Connecting { remaining_s: remaining_s - dt_s },
        SessionState::Exchanging => SessionState::Closed(Outcome::Success),
        closed @ SessionState::Closed(_) => closed,
    };
    LinkSession { state, ..session.clone() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SharingMode {
    SharingOn,
    SharingOff,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyState {
    pub battery_pct: f64,
    pub mode: SharingMode,
}

impl EnergyState {
    pub fn full(mode: SharingMode) -> Self {
        Self { battery_pct: 100.0, mode }
    }
}

pub fn drain_rate(mode: SharingMode, params: &RadioParams) -> f64 {
    match mode {
        SharingMode::SharingOn => params.drain_sharing_on,
        SharingMode::SharingOff => params.drain_sharing_off,
    }
}

/// Linear drain over `dt_hours`, floored at zero.
pub fn energy_tick(e: EnergyState, dt_hours: f64, params: &RadioParams) -> EnergyState {
    debug_assert!(dt_hours >= 0.0);
    let drained = drain_rate(e.mode, params) * dt_hours.max(0.0);
    EnergyState { battery_pct: (e.battery_pct - drained).max(0.0), ..e }
}
