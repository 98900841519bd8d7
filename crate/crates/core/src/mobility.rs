//! Peer movement: random waypoint roaming, gathering at points of interest
//! and riding a shared vehicle. Mobility is what brings peers into range;
//! nothing else in the simulator moves data between locations.

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Position) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Area {
    pub width: f64,
    pub height: f64,
}

impl Area {
    pub fn contains(&self, p: &Position) -> bool {
        (0.0..=self.width).contains(&p.x) && (0.0..=self.height).contains(&p.y)
    }

    pub fn clamp(&self, p: Position) -> Position {
        Position::new(p.x.clamp(0.0, self.width), p.y.clamp(0.0, self.height))
    }

    pub fn random_point<R: Rng + ?Sized>(&self, rng: &mut R) -> Position {
        Position::new(rng.random_range(0.0..=self.width), rng.random_range(0.0..=self.height))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MobilityModel {
    RandomWaypoint,
    Gathering,
    TransitLine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatheringParams {
    pub pois: Vec<Position>,
    /// Mean of the exponential part of a stay.
    pub mean_dwell_s: f64,
    /// Every stay lasts at least this long.
    pub min_dwell_s: f64,
    /// Peers settle uniformly within this radius of the point of interest.
    pub seat_radius_m: f64,
}

/// A vehicle moving at constant speed from `start` to `end` over `ride_s`
/// seconds. All riders share its position; afterwards they roam.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitParams {
    pub start: Position,
    pub end: Position,
    pub ride_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MobilityParams {
    pub area: Area,
    pub v_min: f64,
    pub v_max: f64,
    pub pause_max_s: f64,
    pub gathering: Option<GatheringParams>,
    pub transit: Option<TransitParams>,
}

impl Default for MobilityParams {
    fn default() -> Self {
        Self {
            area: Area { width: 200.0, height: 200.0 },
            v_min: 0.5,
            v_max: 1.5,
            pause_max_s: 120.0,
            gathering: None,
            transit: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MobilityState {
    pub position: Position,
    pub waypoint: Position,
    pub speed: f64,
    pub pause_remaining_s: f64,
    pub model: MobilityModel,
    /// Index of the point of interest being visited (gathering only).
    pub poi: Option<usize>,
    /// Time spent in the current model; drives the vehicle position.
    pub elapsed_s: f64,
}

impl MobilityState {
    /// Places a peer at the start of `model` using `rng` for every free
    /// choice.
    pub fn spawn<R: Rng + ?Sized>(model: MobilityModel, params: &MobilityParams, rng: &mut R) -> Self {
        match model {
            MobilityModel::RandomWaypoint => {
                let position = params.area.random_point(rng);
                Self::roaming(position, params, rng)
            }
            MobilityModel::Gathering => {
                let g = gathering(params);
                let poi = rng.random_range(0..g.pois.len());
                let seat = seat_near(g.pois[poi], g.seat_radius_m, &params.area, rng);
                Self {
                    position: seat,
                    waypoint: seat,
                    speed: draw_speed(params, rng),
                    pause_remaining_s: draw_dwell(g, rng),
                    model,
                    poi: Some(poi),
                    elapsed_s: 0.0,
                }
            }
            MobilityModel::TransitLine => {
                let t = transit(params);
                Self {
                    position: t.start,
                    waypoint: t.end,
                    speed: t.start.distance(&t.end) / t.ride_s.max(f64::MIN_POSITIVE),
                    pause_remaining_s: 0.0,
                    model,
                    poi: None,
                    elapsed_s: 0.0,
                }
            }
        }
    }

    /// A random-waypoint peer at `position` heading for a fresh waypoint.
    pub fn roaming<R: Rng + ?Sized>(position: Position, params: &MobilityParams, rng: &mut R) -> Self {
        Self {
            position,
            waypoint: params.area.random_point(rng),
            speed: draw_speed(params, rng),
            pause_remaining_s: 0.0,
            model: MobilityModel::RandomWaypoint,
            poi: None,
            elapsed_s: 0.0,
        }
    }

    /// A random-waypoint peer with a fixed first leg.
    pub fn heading(position: Position, waypoint: Position, speed: f64) -> Self {
        Self {
            position,
            waypoint,
            speed,
            pause_remaining_s: 0.0,
            model: MobilityModel::RandomWaypoint,
            poi: None,
            elapsed_s: 0.0,
        }
    }
}

fn gathering(params: &MobilityParams) -> &GatheringParams {
    params
        .gathering
        .as_ref()
        .filter(|g| !g.pois.is_empty())
        .expect("gathering model requires at least one point of interest")
}

fn transit(params: &MobilityParams) -> &TransitParams {
    params.transit.as_ref().expect("transit model requires a line")
}

fn draw_speed<R: Rng + ?Sized>(params: &MobilityParams, rng: &mut R) -> f64 {
    if params.v_max > params.v_min {
        rng.random_range(params.v_min..=params.v_max)
    } else {
        params.v_min
    }
}

fn draw_pause<R: Rng + ?Sized>(params: &MobilityParams, rng: &mut R) -> f64 {
    if params.pause_max_s > 0.0 {
        rng.random_range(0.0..=params.pause_max_s)
    } else {
        0.0
    }
}

fn draw_dwell<R: Rng + ?Sized>(g: &GatheringParams, rng: &mut R) -> f64 {
    let extra = match Exp::new(1.0 / g.mean_dwell_s.max(f64::MIN_POSITIVE)) {
        Ok(exp) if g.mean_dwell_s > 0.0 => exp.sample(rng),
        _ => 0.0,
    };
    g.min_dwell_s + extra
}

fn seat_near<R: Rng + ?Sized>(poi: Position, radius: f64, area: &Area, rng: &mut R) -> Position {
    if radius <= 0.0 {
        return area.clamp(poi);
    }
    // uniform over the disc
    let r = radius * rng.random::<f64>().sqrt();
    let theta = rng.random_range(0.0..std::f64::consts::TAU);
    area.clamp(Position::new(poi.x + r * theta.cos(), poi.y + r * theta.sin()))
}

/// Moves `from` toward `to` by at most `step` meters. Returns the new
/// position and whether `to` was reached.
fn advance(from: Position, to: Position, step: f64) -> (Position, bool) {
    let d = from.distance(&to);
    if d <= step {
        return (to, true);
    }
    let f = step / d;
    (Position::new(from.x + (to.x - from.x) * f, from.y + (to.y - from.y) * f), false)
}

/// Advances a peer by `dt_s` seconds.
pub fn step_mobility<R: Rng + ?Sized>(
    m: &MobilityState,
    dt_s: f64,
    params: &MobilityParams,
    rng: &mut R,
) -> MobilityState {
    debug_assert!(dt_s > 0.0);
    let mut next = m.clone();
    next.elapsed_s += dt_s;
    match m.model {
        MobilityModel::RandomWaypoint => {
            if m.pause_remaining_s > 0.0 {
                next.pause_remaining_s = m.pause_remaining_s - dt_s;
                if next.pause_remaining_s <= 0.0 {
                    next.pause_remaining_s = 0.0;
                    next.waypoint = params.area.random_point(rng);
                    next.speed = draw_speed(params, rng);
                }
                return next;
            }
            let (pos, arrived) = advance(m.position, m.waypoint, m.speed * dt_s);
            next.position = params.area.clamp(pos);
            if arrived {
                next.pause_remaining_s = draw_pause(params, rng);
                if next.pause_remaining_s <= 0.0 {
                    next.waypoint = params.area.random_point(rng);
                    next.speed = draw_speed(params, rng);
                }
            }
        }
        MobilityModel::Gathering => {
            let g = gathering(params);
            if m.pause_remaining_s > 0.0 {
                next.pause_remaining_s = m.pause_remaining_s - dt_s;
                if next.pause_remaining_s <= 0.0 {
                    next.pause_remaining_s = 0.0;
                    let poi = pick_other_poi(m.poi, g.pois.len(), rng);
                    next.poi = Some(poi);
                    next.waypoint = seat_near(g.pois[poi], g.seat_radius_m, &params.area, rng);
                    next.speed = draw_speed(params, rng);
                }
                return next;
            }
            let (pos, arrived) = advance(m.position, m.waypoint, m.speed * dt_s);
            next.position = params.area.clamp(pos);
            if arrived {
                // a zero-length stay still holds the peer for one step
                next.pause_remaining_s = draw_dwell(g, rng).max(f64::MIN_POSITIVE);
            }
        }
        MobilityModel::TransitLine => {
            let t = transit(params);
            if next.elapsed_s < t.ride_s {
                let f = next.elapsed_s / t.ride_s;
                next.position = params
                    .area
                    .clamp(Position::new(t.start.x + (t.end.x - t.start.x) * f, t.start.y + (t.end.y - t.start.y) * f));
            } else {
                // alight and disperse
                let at = params.area.clamp(t.end);
                next = MobilityState::roaming(at, params, rng);
            }
        }
    }
    next
}

fn pick_other_poi<R: Rng + ?Sized>(current: Option<usize>, n: usize, rng: &mut R) -> usize {
    match current {
        Some(c) if n > 1 => {
            let i = rng.random_range(0..n - 1);
            if i >= c {
                i + 1
            } else {
                i
            }
        }
        _ => rng.random_range(0..n),
    }
}

/// Symmetric Euclidean distance matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DistanceMatrix {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }
}

pub fn pairwise_distances(positions: &[Position]) -> DistanceMatrix {
    let n = positions.len();
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d = positions[i].distance(&positions[j]);
            data[i * n + j] = d;
            data[j * n + i] = d;
        }
    }
    DistanceMatrix { n, data }
}
