//! Deterministic tick loop.
//!
//! Each tick moves every peer, detects which pairs are within the effective
//! radius, steps one [`LinkSession`] per in-range pair and, for sessions that
//! finish their handshake, swaps [`ExchangeMessage`]s over the wire format.
//! Receivers run the filter pipeline on what they got. Message effects are
//! applied at a barrier in pseudo-id order so results never depend on pair
//! iteration order.
//!
//! Peers only ever see bytes delivered through a session. The world keeps a
//! separate [`GroundTruth`] (item origins, community labels, who met whom)
//! that exists purely for measurement.

pub mod analysis;
pub mod events;
pub mod metrics;

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;
use thiserror::Error;

use crate::mobility::{pairwise_distances, step_mobility, MobilityParams, MobilityState, Position};
use crate::prefs::{
    cosine_similarity, predict_ratings, resample_neighborhood, shared_view, ContextData, ItemId,
    NeighborhoodPreferenceList, PeerId, PeerPreferenceList, Rating, Recommendation, SimilarityData, SimilarityStore,
};
use crate::radio::{
    energy_tick, step_session, EnergyState, LinkSession, Outcome, RadioParams, SessionState, SharingMode,
};
use crate::scenario::{FilterConfig, ScenarioConfig, ScenarioError};
use crate::wire::{self, ContextStamp, DecodeError, EncodeError, ExchangeMessage, PayloadError};

pub use analysis::{community_coverage, coverage, flow_ratio, relay_reachability, AnalysisError};
pub use events::{Event, EventLog};
pub use metrics::{Counters, CoverageStats, MetricsRecord};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("encoding message: {0}")]
    Encode(#[from] EncodeError),
    #[error("decoding message: {0}")]
    Decode(#[from] DecodeError),
    #[error("bad payload: {0}")]
    Payload(#[from] PayloadError),
}

/// Data received in one exchange, stamped with where and when it arrived.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Received {
    pub sender: PeerId,
    pub context: ContextData,
    pub sender_context: ContextStamp,
    pub similarity: SimilarityData,
    pub neighborhood_len: usize,
    pub score: Option<f64>,
    pub admitted: bool,
}

/// Result of running the filter on one received message.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterOutcome {
    pub score: Option<f64>,
    pub admitted: bool,
}

#[derive(Debug, Clone)]
pub struct PeerAgent {
    pub pseudo_id: PeerId,
    pub prefs: PeerPreferenceList,
    pub nbhd: NeighborhoodPreferenceList,
    pub store: SimilarityStore,
    pub mobility: MobilityState,
    pub energy: EnergyState,
    pub sharing_enabled: bool,
    /// Ground truth for metrics; not part of any message.
    pub community_label: String,
    pub recommendations: Vec<Recommendation>,
    pub inbox: Vec<Received>,
    rng: ChaCha8Rng,
}

impl PeerAgent {
    /// What this peer sends in an exchange: a fresh shared view of its
    /// ratings plus its neighborhood list.
    pub fn outgoing_message(&mut self, time_s: f64) -> ExchangeMessage {
        let similarity = shared_view(&self.prefs, &mut self.rng);
        let stamp = ContextStamp { x: self.mobility.position.x, y: self.mobility.position.y, t: time_s };
        ExchangeMessage::build(self.pseudo_id.clone(), stamp, &similarity, &self.nbhd)
    }

    /// Filter pipeline: score the sender, offer it to the store and, when
    /// admitted, resample the neighborhood list and refresh
    /// recommendations.
    pub fn receive(
        &mut self,
        msg: &ExchangeMessage,
        context: ContextData,
        filter: &FilterConfig,
    ) -> Result<FilterOutcome, PayloadError> {
        let similarity = msg.similarity_data()?;
        let snapshot = msg.neighborhood(filter.capacity)?;
        let score = cosine_similarity(&self.prefs.full_view(), &similarity, filter.min_overlap);
        let admitted = match score {
            Some(s) => self.store.admit(msg.sender.clone(), s, snapshot),
            None => false,
        };
        if admitted {
            self.refresh(filter);
        }
        self.inbox.push(Received {
            sender: msg.sender.clone(),
            context,
            sender_context: msg.context,
            similarity,
            neighborhood_len: msg.neighborhood_payload.len(),
            score,
            admitted,
        });
        Ok(FilterOutcome { score, admitted })
    }

    fn refresh(&mut self, filter: &FilterConfig) {
        self.nbhd = resample_neighborhood(&self.prefs, &self.store, filter.capacity, filter.n_draws, &mut self.rng);
        self.recommendations = predict_ratings(&self.prefs, &self.nbhd, filter.top_n);
    }
}

/// Measurement-only knowledge the peers never have.
#[derive(Debug, Clone, Default)]
pub struct GroundTruth {
    /// Community pool each community-specific item belongs to.
    pub item_community: BTreeMap<ItemId, usize>,
    /// Items of each community pool, in pool order.
    pub community_items: Vec<Vec<ItemId>>,
    /// Community index of every peer.
    pub peer_community: Vec<usize>,
    /// Every pair (by peer index, smaller first) that was ever in range.
    pub contacts: BTreeSet<(usize, usize)>,
}

#[derive(Debug, Clone)]
struct PairLink {
    session: Option<LinkSession>,
}

/// Owned result of a finished run.
#[derive(Debug)]
pub struct RunOutput {
    pub world: World,
    pub metrics: Vec<MetricsRecord>,
    pub events: EventLog,
}

pub struct World {
    pub config: ScenarioConfig,
    pub seed: u64,
    pub radio: RadioParams,
    pub mobility: MobilityParams,
    pub peers: Vec<PeerAgent>,
    pub tick: u64,
    pub counters: Counters,
    pub truth: GroundTruth,
    pub events: EventLog,
    /// Size of every message sent, in send order.
    pub message_sizes: Vec<usize>,
    /// Pairs currently in range, keyed by peer index (smaller first).
    links: BTreeMap<(usize, usize), PairLink>,
    radio_rng: ChaCha8Rng,
    coverage_cache: Option<CoverageStats>,
}

impl std::fmt::Debug for World {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("World")
            .field("scenario", &self.config.name)
            .field("seed", &self.seed)
            .field("peers", &self.peers.len())
            .field("tick", &self.tick)
            .field("counters", &self.counters)
            .finish()
    }
}

/// Stream 0 sets up the population, 1 drives the radio, 2.. each peer.
fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

pub fn community_item(community: usize, index: usize) -> ItemId {
    ItemId::new(format!("tt{:02}{:05}", community + 1, index)).expect("non-empty")
}

pub fn shared_item(index: usize) -> ItemId {
    ItemId::new(format!("tt00{index:05}")).expect("non-empty")
}

fn draw_stars(mean: f64, noise: f64, rng: &mut ChaCha8Rng) -> u8 {
    let v = match Normal::new(mean, noise) {
        Ok(n) if noise > 0.0 => n.sample(rng),
        _ => mean,
    };
    v.round().clamp(1.0, 5.0) as u8
}

impl World {
    pub fn new(config: ScenarioConfig, seed: u64) -> Result<Self, SimError> {
        config.check()?;
        let radio = config.radio_params();
        let mobility = config.mobility_params();
        let spec = &config.communities;
        let mut setup = stream(seed, 0);

        let community_items: Vec<Vec<ItemId>> =
            (0..spec.count).map(|c| (0..spec.items_per_community).map(|j| community_item(c, j)).collect()).collect();
        let item_community = community_items
            .iter()
            .enumerate()
            .flat_map(|(c, items)| items.iter().map(move |i| (i.clone(), c)))
            .collect();
        let shared: Vec<ItemId> = (0..spec.shared_items).map(shared_item).collect();

        let disabled: BTreeSet<usize> = config.sharing_disabled.iter().copied().collect();
        let mut peers = Vec::with_capacity(config.peers);
        let mut peer_community = Vec::with_capacity(config.peers);
        for i in 0..config.peers {
            let community = i % spec.count;
            let pseudo_id = PeerId::random(&mut setup);
            let mut prefs = PeerPreferenceList::new(pseudo_id.clone(), config.filter.share_fraction).map_err(|e| {
                ScenarioError::Invalid(vec![crate::scenario::ConfigIssue {
                    key: "filter.share_fraction".into(),
                    constraint: e.to_string(),
                }])
            })?;
            let pool = &community_items[community];
            let mut picked = index::sample(&mut setup, pool.len(), spec.ratings_per_peer).into_vec();
            picked.sort_unstable();
            for j in picked {
                let stars = draw_stars(spec.affinity, spec.noise, &mut setup);
                prefs.rate(Rating { item_id: pool[j].clone(), value: stars });
            }
            let mut picked = index::sample(&mut setup, shared.len(), spec.shared_ratings_per_peer).into_vec();
            picked.sort_unstable();
            for j in picked {
                let mean = if (j + community).is_multiple_of(2) { 4.5 } else { 1.5 };
                let stars = draw_stars(mean, spec.noise, &mut setup);
                prefs.rate(Rating { item_id: shared[j].clone(), value: stars });
            }

            let mut rng = stream(seed, 2 + i as u64);
            let state = match config.placements.get(i) {
                Some(p) => {
                    let pos = Position::new(p.position[0], p.position[1]);
                    let way = p.waypoint.map_or(pos, |w| Position::new(w[0], w[1]));
                    MobilityState::heading(pos, way, p.speed.unwrap_or(config.mobility.v_min))
                }
                None => MobilityState::spawn(config.mobility.model, &mobility, &mut rng),
            };
            let sharing_enabled = !disabled.contains(&i);
            let mode = if sharing_enabled { SharingMode::SharingOn } else { SharingMode::SharingOff };
            let store = SimilarityStore::new(config.filter.k).expect("validated k");
            let mut agent = PeerAgent {
                nbhd: NeighborhoodPreferenceList::new(config.filter.capacity).expect("validated capacity"),
                pseudo_id,
                prefs,
                store,
                mobility: state,
                energy: EnergyState::full(mode),
                sharing_enabled,
                community_label: format!("c{community}"),
                recommendations: Vec::new(),
                inbox: Vec::new(),
                rng,
            };
            // seed the propagated list from the peer's own shared ratings
            agent.refresh(&config.filter);
            peers.push(agent);
            peer_community.push(community);
        }

        let events = EventLog::new(config.output.events);
        Ok(Self {
            radio,
            mobility,
            peers,
            tick: 0,
            counters: Counters::default(),
            truth: GroundTruth { item_community, community_items, peer_community, contacts: BTreeSet::new() },
            events,
            message_sizes: Vec::new(),
            links: BTreeMap::new(),
            radio_rng: stream(seed, 1),
            coverage_cache: None,
            config,
            seed,
        })
    }

    pub fn time_s(&self) -> f64 {
        self.tick as f64 * self.config.tick_s
    }

    /// Pairs currently within the effective radius.
    pub fn contacts_open(&self) -> usize {
        self.links.len()
    }

    /// Sessions not yet closed.
    pub fn sessions_open(&self) -> usize {
        self.links.values().filter(|l| l.session.as_ref().is_some_and(|s| !s.is_closed())).count()
    }

    /// Advances the world by one tick and returns its metrics row.
    pub fn step(&mut self) -> Result<MetricsRecord, SimError> {
        let dt = self.config.tick_s;
        self.tick += 1;
        let tick = self.tick;
        let now = self.time_s();

        for peer in &mut self.peers {
            peer.mobility = step_mobility(&peer.mobility, dt, &self.mobility, &mut peer.rng);
        }
        let positions: Vec<Position> = self.peers.iter().map(|p| p.mobility.position).collect();
        let distances = pairwise_distances(&positions);
        let radius = self.radio.effective_radius_m;
        let n = self.peers.len();

        let mut exchanging = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                let d = distances.get(i, j);
                let in_range = d <= radius;
                let key = (i, j);
                let (a, b) = (self.peers[i].pseudo_id.clone(), self.peers[j].pseudo_id.clone());
                if in_range && !self.links.contains_key(&key) {
                    self.truth.contacts.insert(key);
                    self.events.push(Event::ContactBegin { tick, a: a.clone(), b: b.clone(), distance_m: d });
                    let session = (self.peers[i].sharing_enabled && self.peers[j].sharing_enabled).then(|| {
                        self.counters.sessions_opened += 1;
                        self.events.push(Event::SessionOpen { tick, a: a.clone(), b: b.clone(), distance_m: d });
                        LinkSession::new(a.clone(), b.clone(), d, self.config.obstacles)
                    });
                    self.links.insert(key, PairLink { session });
                }
                let Some(link) = self.links.get_mut(&key) else { continue };
                if let Some(s) = link.session.as_mut().filter(|s| !s.is_closed()) {
                    *s = step_session(s, dt, in_range, &self.radio, &mut self.radio_rng);
                    match s.state {
                        SessionState::Exchanging => exchanging.push(key),
                        SessionState::Closed(outcome) => {
                            self.counters.record_outcome(outcome);
                            self.events.push(Event::SessionClosed {
                                tick,
                                a: a.clone(),
                                b: b.clone(),
                                outcome,
                                contact_distance_m: s.contact_distance_m,
                            });
                        }
                        _ => {}
                    }
                }
                if !in_range {
                    self.links.remove(&key);
                    self.events.push(Event::ContactEnd { tick, a, b });
                }
            }
        }

        self.exchange(&exchanging, tick, now)?;

        let dt_hours = dt / 3600.0;
        for peer in &mut self.peers {
            peer.energy = energy_tick(peer.energy, dt_hours, &self.radio);
        }
        Ok(self.record())
    }

    /// Swaps messages over every session that just finished its handshake,
    /// then closes those sessions as successful.
    fn exchange(&mut self, pairs: &[(usize, usize)], tick: u64, now: f64) -> Result<(), SimError> {
        if pairs.is_empty() {
            return Ok(());
        }
        struct Delivery {
            receiver: usize,
            sender: usize,
            bytes: Vec<u8>,
        }
        let mut deliveries = Vec::with_capacity(pairs.len() * 2);
        for &(i, j) in pairs {
            let contact_distance_m = self.links[&(i, j)]
                .session
                .as_ref()
                .map(|s| s.contact_distance_m)
                .expect("exchanging pair has a session");
            debug_assert!(contact_distance_m <= self.radio.effective_radius_m);
            for (sender, receiver) in [(i, j), (j, i)] {
                let msg = self.peers[sender].outgoing_message(now);
                let bytes = wire::encode(&msg)?;
                debug_assert_eq!(bytes.len(), wire::payload_size(&msg));
                self.counters.messages += 1;
                self.counters.bytes_exchanged += bytes.len() as u64;
                self.message_sizes.push(bytes.len());
                self.events.push(Event::Message {
                    tick,
                    sender: self.peers[sender].pseudo_id.clone(),
                    receiver: self.peers[receiver].pseudo_id.clone(),
                    bytes: bytes.len(),
                    similarity_records: msg.similarity_payload.len(),
                    neighborhood_records: msg.neighborhood_payload.len(),
                    contact_distance_m,
                });
                deliveries.push(Delivery { receiver, sender, bytes });
            }
        }

        deliveries.sort_by(|a, b| {
            self.peers[a.receiver]
                .pseudo_id
                .cmp(&self.peers[b.receiver].pseudo_id)
                .then_with(|| self.peers[a.sender].pseudo_id.cmp(&self.peers[b.sender].pseudo_id))
        });
        let filter = self.config.filter;
        for d in deliveries {
            let msg = wire::decode(&d.bytes)?;
            let receiver = &mut self.peers[d.receiver];
            let pos = receiver.mobility.position;
            let context = ContextData::new((pos.x, pos.y), now);
            let outcome = receiver.receive(&msg, context, &filter)?;
            if outcome.admitted {
                self.counters.admissions += 1;
                self.coverage_cache = None;
            }
            self.events.push(Event::Filter {
                tick,
                receiver: receiver.pseudo_id.clone(),
                sender: msg.sender.clone(),
                score: outcome.score,
                admitted: outcome.admitted,
            });
        }

        for key in pairs {
            let link = self.links.get_mut(key).expect("pair still in range");
            let s = link.session.as_mut().expect("exchanging pair has a session");
            *s = step_session(s, self.config.tick_s, true, &self.radio, &mut self.radio_rng);
            debug_assert_eq!(s.outcome(), Some(Outcome::Success));
            self.counters.record_outcome(Outcome::Success);
            self.events.push(Event::SessionClosed {
                tick,
                a: s.peers.0.clone(),
                b: s.peers.1.clone(),
                outcome: Outcome::Success,
                contact_distance_m: s.contact_distance_m,
            });
        }
        Ok(())
    }

    fn record(&mut self) -> MetricsRecord {
        let coverage = match self.coverage_cache {
            Some(c) => c,
            None => {
                let c = community_coverage(self);
                self.coverage_cache = Some(c);
                c
            }
        };
        let n = self.peers.len().max(1) as f64;
        MetricsRecord {
            tick: self.tick,
            time_s: self.time_s(),
            contacts_open: self.contacts_open(),
            sessions_open: self.sessions_open(),
            counters: self.counters,
            battery_pct: self.peers.iter().map(|p| p.energy.battery_pct).collect(),
            coverage,
            nbhd_entries_mean: self.peers.iter().map(|p| p.nbhd.len() as f64).sum::<f64>() / n,
            store_fill_mean: self.peers.iter().map(|p| p.store.len() as f64).sum::<f64>() / n,
        }
    }

    /// Number of (receiver, item) pairs reached only through relays, using
    /// the world's own contact record.
    pub fn relay_reachability(&self) -> u64 {
        analysis::relay_reachability_with(self, |a, b| self.truth.contacts.contains(&(a.min(b), a.max(b))))
    }

    pub fn peer_index(&self, id: &PeerId) -> Option<usize> {
        self.peers.iter().position(|p| &p.pseudo_id == id)
    }
}

/// Runs `config` for its configured duration.
pub fn run(config: &ScenarioConfig, seed: u64) -> Result<RunOutput, SimError> {
    run_ticks(config, seed, config.ticks())
}

/// Runs `config` for exactly `ticks` ticks.
pub fn run_ticks(config: &ScenarioConfig, seed: u64, ticks: u64) -> Result<RunOutput, SimError> {
    let mut world = World::new(config.clone(), seed)?;
    let mut metrics = Vec::with_capacity(ticks as usize);
    for _ in 0..ticks {
        metrics.push(world.step()?);
    }
    let events = std::mem::take(&mut world.events);
    Ok(RunOutput { world, metrics, events })
}
