//! Per-peer data pools and the on-device filter pipeline.
//!
//! A peer keeps its own ratings ([`PeerPreferenceList`]) private and only ever
//! propagates two things: a projection of those ratings used for similarity
//! scoring ([`SimilarityData`]) and an anonymous aggregate mixed from its most
//! similar encounters ([`NeighborhoodPreferenceList`]). Upon receiving data the
//! filter runs [`cosine_similarity`], [`SimilarityStore::admit`],
//! [`resample_neighborhood`] and finally [`predict_ratings`].

use std::collections::BTreeMap;
use std::fmt;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_K: usize = 5;
pub const DEFAULT_CAPACITY: usize = 500;
pub const DEFAULT_N_DRAWS: usize = 500;
pub const DEFAULT_MIN_OVERLAP: usize = 2;
/// Pooling weight of each of the resampling peer's own shared ratings.
pub const DEFAULT_SELF_WEIGHT: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PrefsError {
    #[error("star rating {0} outside 1..=5")]
    StarsOutOfRange(u8),
    #[error("aggregated rating {0} outside [1.0, 5.0]")]
    ValueOutOfRange(f64),
    #[error("item id must be non-empty")]
    EmptyItemId,
    #[error("share fraction {0} outside [0, 1]")]
    ShareFraction(f64),
    #[error("entry weight must be at least 1")]
    ZeroWeight,
    #[error("capacity must be positive")]
    ZeroCapacity,
    #[error("neighborhood list is full ({0} entries)")]
    CapacityExceeded(usize),
    #[error("k must be positive")]
    ZeroK,
}

/// Opaque item identifier, e.g. an IMDb-style `tt0111161`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ItemId(String);

impl ItemId {
    pub fn new(id: impl Into<String>) -> Result<Self, PrefsError> {
        let id = id.into();
        if id.is_empty() {
            return Err(PrefsError::EmptyItemId);
        }
        Ok(Self(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ItemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Peer pseudonym. Freshly generated ids are 36-character UUID strings.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PeerId(String);

impl PeerId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    /// Draws a random (version 4) UUID from `rng`.
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let bytes: [u8; 16] = rng.random();
        Self(uuid::Builder::from_random_bytes(bytes).into_uuid().hyphenated().to_string())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for PeerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rating {
    pub item_id: ItemId,
    pub value: u8,
}

impl Rating {
    pub fn new(item_id: ItemId, value: u8) -> Result<Self, PrefsError> {
        check_stars(value)?;
        Ok(Self { item_id, value })
    }
}

fn check_stars(value: u8) -> Result<(), PrefsError> {
    if (1..=5).contains(&value) {
        Ok(())
    } else {
        Err(PrefsError::StarsOutOfRange(value))
    }
}

/// A peer's own ratings. Never leaves the device except through
/// [`shared_view`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeerPreferenceList {
    owner: PeerId,
    ratings: BTreeMap<ItemId, u8>,
    share_fraction: f64,
}

impl PeerPreferenceList {
    pub fn new(owner: PeerId, share_fraction: f64) -> Result<Self, PrefsError> {
        if !(0.0..=1.0).contains(&share_fraction) {
            return Err(PrefsError::ShareFraction(share_fraction));
        }
        Ok(Self { owner, ratings: BTreeMap::new(), share_fraction })
    }

    /// Inserts or replaces the rating for `rating.item_id`.
    pub fn rate(&mut self, rating: Rating) -> Option<u8> {
        self.ratings.insert(rating.item_id, rating.value)
    }

    pub fn owner(&self) -> &PeerId {
        &self.owner
    }

    pub fn ratings(&self) -> &BTreeMap<ItemId, u8> {
        &self.ratings
    }

    pub fn get(&self, item: &ItemId) -> Option<u8> {
        self.ratings.get(item).copied()
    }

    pub fn contains(&self, item: &ItemId) -> bool {
        self.ratings.contains_key(item)
    }

    pub fn len(&self) -> usize {
        self.ratings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ratings.is_empty()
    }

    pub fn share_fraction(&self) -> f64 {
        self.share_fraction
    }

    pub fn set_share_fraction(&mut self, share_fraction: f64) -> Result<(), PrefsError> {
        if !(0.0..=1.0).contains(&share_fraction) {
            return Err(PrefsError::ShareFraction(share_fraction));
        }
        self.share_fraction = share_fraction;
        Ok(())
    }

    /// The full, unsampled rating vector. Used locally when scoring an
    /// incoming peer; never transmitted as is.
    pub fn full_view(&self) -> SimilarityData {
        SimilarityData { vector: self.ratings.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeighborhoodEntry {
    value: f64,
    weight: u32,
}

impl NeighborhoodEntry {
    /// `value` is rounded to one decimal place, the precision carried on the
    /// wire.
    pub fn new(value: f64, weight: u32) -> Result<Self, PrefsError> {
        if weight == 0 {
            return Err(PrefsError::ZeroWeight);
        }
        let value = round_tenths(value);
        if !(1.0..=5.0).contains(&value) {
            return Err(PrefsError::ValueOutOfRange(value));
        }
        Ok(Self { value, weight })
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn weight(&self) -> u32 {
        self.weight
    }

    /// Value in tenths of a star, e.g. `4.5` -> `45`.
    pub fn value_tenths(&self) -> u16 {
        (self.value * 10.0).round() as u16
    }
}

pub(crate) fn round_tenths(value: f64) -> f64 {
    (value * 10.0).round() / 10.0
}

/// Capacity-bounded aggregate of ratings from an unknown subset of peers.
/// Entries carry no origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborhoodPreferenceList {
    entries: BTreeMap<ItemId, NeighborhoodEntry>,
    capacity: usize,
}

impl NeighborhoodPreferenceList {
    pub fn new(capacity: usize) -> Result<Self, PrefsError> {
        if capacity == 0 {
            return Err(PrefsError::ZeroCapacity);
        }
        Ok(Self { entries: BTreeMap::new(), capacity })
    }

    /// Inserts `entry`, replacing any entry already held for `item`.
    pub fn insert(&mut self, item: ItemId, entry: NeighborhoodEntry) -> Result<(), PrefsError> {
        if !self.entries.contains_key(&item) && self.entries.len() >= self.capacity {
            return Err(PrefsError::CapacityExceeded(self.capacity));
        }
        self.entries.insert(item, entry);
        Ok(())
    }

    /// Folds `entry` into the one held for `item`: weights add and values
    /// combine as a weight-proportional mean.
    pub fn aggregate(&mut self, item: ItemId, entry: NeighborhoodEntry) -> Result<(), PrefsError> {
        match self.entries.get_mut(&item) {
            Some(held) => {
                let weight = held.weight.saturating_add(entry.weight);
                let value = (held.value * held.weight as f64 + entry.value * entry.weight as f64)
                    / (held.weight as f64 + entry.weight as f64);
                *held = NeighborhoodEntry::new(value, weight)?;
                Ok(())
            }
            None => self.insert(item, entry),
        }
    }

    pub fn get(&self, item: &ItemId) -> Option<&NeighborhoodEntry> {
        self.entries.get(item)
    }

    pub fn contains(&self, item: &ItemId) -> bool {
        self.entries.contains_key(item)
    }

    pub fn entries(&self) -> &BTreeMap<ItemId, NeighborhoodEntry> {
        &self.entries
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ItemId, &NeighborhoodEntry)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn total_weight(&self) -> u64 {
        self.entries.values().map(|e| e.weight as u64).sum()
    }
}

/// Rating vector used for similarity scoring.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimilarityData {
    pub vector: BTreeMap<ItemId, u8>,
}

impl SimilarityData {
    pub fn len(&self) -> usize {
        self.vector.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vector.is_empty()
    }
}

impl FromIterator<(ItemId, u8)> for SimilarityData {
    fn from_iter<T: IntoIterator<Item = (ItemId, u8)>>(iter: T) -> Self {
        Self { vector: iter.into_iter().collect() }
    }
}

/// Where and when an encounter happened, attached to received data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextData {
    pub position: (f64, f64),
    pub timestamp: f64,
    #[serde(default)]
    pub tags: Vec<String>,
}

impl ContextData {
    pub fn new(position: (f64, f64), timestamp: f64) -> Self {
        debug_assert!(timestamp >= 0.0);
        Self { position, timestamp, tags: Vec::new() }
    }
}

/// Cosine of the two rating vectors restricted to their co-rated items, or
/// `None` when fewer than `min_overlap` items are co-rated.
///
/// Stars are small integers so the dot product and both squared norms are
/// accumulated exactly; the result is therefore symmetric and exactly `1.0`
/// for identical vectors.
pub fn cosine_similarity(a: &SimilarityData, b: &SimilarityData, min_overlap: usize) -> Option<f64> {
    let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let mut overlap = 0usize;
    let (mut dot, mut norm_a, mut norm_b) = (0u64, 0u64, 0u64);
    for (item, &x) in &small.vector {
        if let Some(&y) = large.vector.get(item) {
            overlap += 1;
            let (x, y) = (x as u64, y as u64);
            dot += x * y;
            norm_a += x * x;
            norm_b += y * y;
        }
    }
    if overlap == 0 || overlap < min_overlap {
        return None;
    }
    let denom = ((norm_a * norm_b) as f64).sqrt();
    Some((dot as f64 / denom).min(1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreSlot {
    pub peer: PeerId,
    pub score: f64,
    pub snapshot: NeighborhoodPreferenceList,
    arrival: u64,
}

impl StoreSlot {
    pub fn arrival(&self) -> u64 {
        self.arrival
    }
}

/// Top-k cache of the most similar peers seen, with the neighborhood list
/// each of them sent.
///
/// Slots stay sorted by score descending; equal scores keep arrival order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityStore {
    k: usize,
    slots: Vec<StoreSlot>,
    next_arrival: u64,
}

impl SimilarityStore {
    pub fn new(k: usize) -> Result<Self, PrefsError> {
        if k == 0 {
            return Err(PrefsError::ZeroK);
        }
        Ok(Self { k, slots: Vec::with_capacity(k), next_arrival: 0 })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn slots(&self) -> &[StoreSlot] {
        &self.slots
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn scores(&self) -> Vec<f64> {
        self.slots.iter().map(|s| s.score).collect()
    }

    pub fn contains(&self, peer: &PeerId) -> bool {
        self.slots.iter().any(|s| &s.peer == peer)
    }

    /// Offers `peer` with `score` to the store and returns whether it was
    /// admitted.
    ///
    /// A new peer is admitted when a slot is free or `score` is strictly
    /// above the current k-th highest score, which is then evicted. A peer
    /// already held is re-scored in place, keeping its original arrival
    /// rank; with its old slot set aside a slot is always free, so
    /// re-encounters are always admitted.
    pub fn admit(&mut self, peer: PeerId, score: f64, snapshot: NeighborhoodPreferenceList) -> bool {
        debug_assert!((-1.0..=1.0).contains(&score), "score {score} out of range");
        if let Some(slot) = self.slots.iter_mut().find(|s| s.peer == peer) {
            slot.score = score;
            slot.snapshot = snapshot;
            self.sort();
            return true;
        }
        if self.slots.len() >= self.k {
            // sorted, so the last slot is the k-th highest (latest arrival on ties)
            let lowest = self.slots.last().map(|s| s.score).unwrap_or(f64::NEG_INFINITY);
            if score <= lowest {
                return false;
            }
            self.slots.pop();
        }
        let arrival = self.next_arrival;
        self.next_arrival += 1;
        self.slots.push(StoreSlot { peer, score, snapshot, arrival });
        self.sort();
        true
    }

    fn sort(&mut self) {
        self.slots.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.arrival.cmp(&b.arrival)));
    }
}

/// Uniformly samples `ceil(share_fraction * |ratings|)` of the owner's
/// ratings without replacement.
pub fn shared_view<R: Rng + ?Sized>(own: &PeerPreferenceList, rng: &mut R) -> SimilarityData {
    let n = own.len();
    let take = shared_count(n, own.share_fraction);
    if take >= n {
        return own.full_view();
    }
    let items: Vec<(&ItemId, &u8)> = own.ratings.iter().collect();
    let mut picked = rand::seq::index::sample(rng, n, take).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| (items[i].0.clone(), *items[i].1)).collect()
}

fn shared_count(n: usize, share_fraction: f64) -> usize {
    // guard against 0.3 * 10 = 3.0000000000000004 rounding up to 4
    let exact = share_fraction * n as f64;
    ((exact - 1e-9).ceil().max(0.0) as usize).min(n)
}

/// Rebuilds a neighborhood list by bootstrap resampling the pooled source:
/// the owner's shared ratings plus every stored snapshot, each snapshot entry
/// weighted by its multiplicity times the slot's similarity score.
///
/// Draws are aggregated per item (value = mean of drawn values, weight =
/// draw count) and truncated to the `capacity` heaviest items, ties broken by
/// item id. An empty pool yields an empty list.
pub fn resample_neighborhood<R: Rng + ?Sized>(
    own: &PeerPreferenceList,
    store: &SimilarityStore,
    capacity: usize,
    n_draws: usize,
    rng: &mut R,
) -> NeighborhoodPreferenceList {
    resample_neighborhood_weighted(own, store, capacity, n_draws, DEFAULT_SELF_WEIGHT, rng)
}

/// [`resample_neighborhood`] with an explicit pooling weight for own ratings.
pub fn resample_neighborhood_weighted<R: Rng + ?Sized>(
    own: &PeerPreferenceList,
    store: &SimilarityStore,
    capacity: usize,
    n_draws: usize,
    self_weight: f64,
    rng: &mut R,
) -> NeighborhoodPreferenceList {
    let capacity = capacity.max(1);
    let mut out = NeighborhoodPreferenceList { entries: BTreeMap::new(), capacity };

    let shared = shared_view(own, rng);
    let mut pool: Vec<(&ItemId, f64)> = Vec::new();
    let mut weights: Vec<f64> = Vec::new();
    if self_weight > 0.0 {
        for (item, &stars) in &shared.vector {
            pool.push((item, stars as f64));
            weights.push(self_weight);
        }
    }
    for slot in &store.slots {
        if slot.score <= 0.0 {
            continue;
        }
        for (item, entry) in slot.snapshot.iter() {
            pool.push((item, entry.value));
            weights.push(entry.weight as f64 * slot.score);
        }
    }
    if pool.is_empty() || n_draws == 0 {
        return out;
    }
    let Ok(dist) = WeightedIndex::new(&weights) else {
        return out;
    };

    // item -> (sum of drawn values, draw count)
    let mut tally: BTreeMap<&ItemId, (f64, u32)> = BTreeMap::new();
    for _ in 0..n_draws {
        let (item, value) = pool[dist.sample(rng)];
        let t = tally.entry(item).or_insert((0.0, 0));
        t.0 += value;
        t.1 += 1;
    }

    let mut ranked: Vec<(&ItemId, f64, u32)> =
        tally.into_iter().map(|(item, (sum, count))| (item, sum / count as f64, count)).collect();
    ranked.sort_by(|a, b| b.2.cmp(&a.2).then_with(|| a.0.cmp(b.0)));
    ranked.truncate(capacity);
    for (item, mean, count) in ranked {
        let entry = NeighborhoodEntry { value: round_tenths(mean).clamp(1.0, 5.0), weight: count };
        out.entries.insert(item.clone(), entry);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub item_id: ItemId,
    pub predicted: f64,
}

/// Weighted-popularity recommender: every neighborhood item the owner has not
/// rated, ranked by (weight, value) descending and item id ascending.
pub fn predict_ratings(
    own: &PeerPreferenceList,
    nbhd: &NeighborhoodPreferenceList,
    top_n: usize,
) -> Vec<Recommendation> {
    let mut candidates: Vec<(&ItemId, &NeighborhoodEntry)> =
        nbhd.iter().filter(|(item, _)| !own.contains(item)).collect();
    candidates.sort_by(|(ia, a), (ib, b)| {
        b.weight.cmp(&a.weight).then_with(|| b.value.total_cmp(&a.value)).then_with(|| ia.cmp(ib))
    });
    candidates
        .into_iter()
        .take(top_n)
        .map(|(item, entry)| Recommendation { item_id: item.clone(), predicted: entry.value })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeSet;

    fn item(s: &str) -> ItemId {
        ItemId::new(s).unwrap()
    }

    fn sim(pairs: &[(&str, u8)]) -> SimilarityData {
        pairs.iter().map(|&(i, v)| (item(i), v)).collect()
    }

    fn prefs(pairs: &[(&str, u8)], share: f64) -> PeerPreferenceList {
        let mut p = PeerPreferenceList::new(PeerId::new("owner"), share).unwrap();
        for &(i, v) in pairs {
            p.rate(Rating::new(item(i), v).unwrap());
        }
        p
    }

    fn nbhd(entries: &[(&str, f64, u32)]) -> NeighborhoodPreferenceList {
        let mut n = NeighborhoodPreferenceList::new(DEFAULT_CAPACITY).unwrap();
        for &(i, v, w) in entries {
            n.insert(item(i), NeighborhoodEntry::new(v, w).unwrap()).unwrap();
        }
        n
    }

    fn empty_nbhd() -> NeighborhoodPreferenceList {
        NeighborhoodPreferenceList::new(DEFAULT_CAPACITY).unwrap()
    }

    /// Independent oracle: walk every item of `a`, collect co-rated pairs as
    /// floats, then cosine of the two sub-vectors.
    fn cosine_oracle(a: &SimilarityData, b: &SimilarityData, min_overlap: usize) -> Option<f64> {
        let pairs: Vec<(f64, f64)> =
            a.vector.iter().filter_map(|(k, &x)| b.vector.get(k).map(|&y| (x as f64, y as f64))).collect();
        if pairs.is_empty() || pairs.len() < min_overlap {
            return None;
        }
        let dot: f64 = pairs.iter().map(|(x, y)| x * y).sum();
        let na: f64 = pairs.iter().map(|(x, _)| x * x).sum::<f64>().sqrt();
        let nb: f64 = pairs.iter().map(|(_, y)| y * y).sum::<f64>().sqrt();
        Some(dot / (na * nb))
    }

    #[test]
    fn rating_bounds() {
        assert!(Rating::new(item("a"), 0).is_err());
        assert!(Rating::new(item("a"), 6).is_err());
        assert!(Rating::new(item("a"), 1).is_ok());
        assert!(ItemId::new("").is_err());
        assert!(PeerPreferenceList::new(PeerId::new("p"), 1.5).is_err());
        assert!(NeighborhoodEntry::new(0.9, 1).is_err());
        assert!(NeighborhoodEntry::new(3.0, 0).is_err());
    }

    #[test]
    fn one_rating_per_item() {
        let mut p = prefs(&[("a", 3)], 1.0);
        assert_eq!(p.rate(Rating::new(item("a"), 5).unwrap()), Some(3));
        assert_eq!(p.len(), 1);
        assert_eq!(p.get(&item("a")), Some(5));
    }

    #[test]
    fn neighborhood_capacity_is_enforced() {
        let mut n = NeighborhoodPreferenceList::new(2).unwrap();
        let e = NeighborhoodEntry::new(3.0, 1).unwrap();
        n.insert(item("a"), e).unwrap();
        n.insert(item("b"), e).unwrap();
        assert_eq!(n.insert(item("c"), e), Err(PrefsError::CapacityExceeded(2)));
        // replacing an existing item is fine at capacity
        n.insert(item("a"), e).unwrap();
        assert_eq!(n.len(), 2);
    }

    #[test]
    fn aggregate_keeps_one_entry_per_item() {
        let mut n = empty_nbhd();
        n.aggregate(item("a"), NeighborhoodEntry::new(5.0, 1).unwrap()).unwrap();
        n.aggregate(item("a"), NeighborhoodEntry::new(3.0, 3).unwrap()).unwrap();
        assert_eq!(n.len(), 1);
        let e = n.get(&item("a")).unwrap();
        assert_eq!(e.weight(), 4);
        assert_eq!(e.value(), 3.5);
    }

    #[test]
    fn cosine_identical() {
        let a = sim(&[("m1", 5), ("m2", 1)]);
        assert_eq!(cosine_similarity(&a, &a.clone(), 2), Some(1.0));
    }

    #[test]
    fn cosine_no_overlap() {
        assert_eq!(cosine_similarity(&sim(&[("m1", 4)]), &sim(&[("m2", 4)]), 1), None);
    }

    #[test]
    fn cosine_opposed_pair() {
        let a = sim(&[("m1", 1), ("m2", 5)]);
        let b = sim(&[("m1", 5), ("m2", 1)]);
        let got = cosine_similarity(&a, &b, 2).unwrap();
        let oracle = cosine_oracle(&a, &b, 2).unwrap();
        assert!((oracle - 10.0 / 26.0).abs() < 1e-12);
        assert!((got - oracle).abs() < 1e-12);
        assert!((got - 0.3846).abs() < 1e-4);
    }

    #[test]
    fn cosine_min_overlap_gate() {
        let a = sim(&[("m1", 1), ("m2", 5), ("m3", 2)]);
        let b = sim(&[("m1", 5), ("m2", 1)]);
        assert!(cosine_similarity(&a, &b, 2).is_some());
        assert_eq!(cosine_similarity(&a, &b, 3), None);
    }

    fn arb_sim() -> impl Strategy<Value = SimilarityData> {
        prop::collection::btree_map(0u8..12, 1u8..=5, 0..10)
            .prop_map(|m| m.into_iter().map(|(k, v)| (item(&format!("i{k}")), v)).collect())
    }

    proptest! {
        #[test]
        fn cosine_is_symmetric(a in arb_sim(), b in arb_sim(), min in 1usize..4) {
            prop_assert_eq!(cosine_similarity(&a, &b, min), cosine_similarity(&b, &a, min));
        }

        #[test]
        fn cosine_self_is_one(a in arb_sim(), min in 1usize..4) {
            let got = cosine_similarity(&a, &a, min);
            if a.len() >= min && !a.is_empty() {
                prop_assert_eq!(got, Some(1.0));
            } else {
                prop_assert_eq!(got, None);
            }
        }

        #[test]
        fn cosine_matches_oracle(a in arb_sim(), b in arb_sim(), min in 1usize..4) {
            let got = cosine_similarity(&a, &b, min);
            let want = cosine_oracle(&a, &b, min);
            prop_assert_eq!(got.is_some(), want.is_some());
            if let (Some(g), Some(w)) = (got, want) {
                prop_assert!((g - w).abs() < 1e-12);
                prop_assert!((0.0..=1.0).contains(&g));
            }
        }
    }

    fn store_with(k: usize, scores: &[f64]) -> SimilarityStore {
        let mut s = SimilarityStore::new(k).unwrap();
        for (i, &score) in scores.iter().enumerate() {
            assert!(s.admit(PeerId::new(format!("p{i}")), score, empty_nbhd()));
        }
        s
    }

    #[test]
    fn admit_beats_kth() {
        let mut s = store_with(3, &[0.9, 0.7, 0.5]);
        assert!(s.admit(PeerId::new("new"), 0.6, empty_nbhd()));
        assert_eq!(s.scores(), vec![0.9, 0.7, 0.6]);
    }

    #[test]
    fn admit_rejects_below_kth() {
        let mut s = store_with(3, &[0.9, 0.7, 0.5]);
        let before = s.clone();
        assert!(!s.admit(PeerId::new("new"), 0.4, empty_nbhd()));
        assert_eq!(s, before);
    }

    #[test]
    fn admit_rejects_tie_with_kth() {
        let mut s = store_with(3, &[0.9, 0.7, 0.5]);
        assert!(!s.admit(PeerId::new("new"), 0.5, empty_nbhd()));
        assert_eq!(s.scores(), vec![0.9, 0.7, 0.5]);
    }

    #[test]
    fn admit_into_free_slot() {
        let mut s = SimilarityStore::new(3).unwrap();
        assert!(s.admit(PeerId::new("x"), 0.01, empty_nbhd()));
        assert_eq!(s.len(), 1);
    }

    #[test]
    fn equal_scores_keep_arrival_order() {
        let s = store_with(3, &[0.5, 0.5, 0.5]);
        let peers: Vec<&str> = s.slots().iter().map(|s| s.peer.as_str()).collect();
        assert_eq!(peers, vec!["p0", "p1", "p2"]);
    }

    #[test]
    fn reencounter_replaces_own_slot() {
        let mut s = store_with(3, &[0.9, 0.7, 0.5]);
        let snap = nbhd(&[("z", 4.0, 2)]);
        assert!(s.admit(PeerId::new("p2"), 0.95, snap.clone()));
        assert_eq!(s.len(), 3);
        assert_eq!(s.scores(), vec![0.95, 0.9, 0.7]);
        assert_eq!(s.slots()[0].peer.as_str(), "p2");
        assert_eq!(s.slots()[0].snapshot, snap);
        // lowering a stored peer's score also updates in place
        assert!(s.admit(PeerId::new("p0"), 0.1, empty_nbhd()));
        assert_eq!(s.scores(), vec![0.95, 0.7, 0.1]);
    }

    /// Brute-force oracle over a history of distinct peers: sort all offers
    /// by (score desc, arrival asc) and keep the first k.
    fn store_oracle(k: usize, history: &[f64]) -> Vec<(usize, f64)> {
        let mut all: Vec<(usize, f64)> = history.iter().copied().enumerate().collect();
        all.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        all.truncate(k);
        all
    }

    proptest! {
        #[test]
        fn store_matches_topk_oracle(
            k in 1usize..8,
            // coarse grid so ties are common
            history in prop::collection::vec((0u32..=20).prop_map(|x| x as f64 / 20.0), 0..100),
        ) {
            let mut s = SimilarityStore::new(k).unwrap();
            for (i, &score) in history.iter().enumerate() {
                s.admit(PeerId::new(format!("{i:04}")), score, empty_nbhd());
                prop_assert!(s.len() <= k);
            }
            let want = store_oracle(k, &history);
            let got: Vec<(usize, f64)> = s
                .slots()
                .iter()
                .map(|sl| (sl.peer.as_str().parse().unwrap(), sl.score))
                .collect();
            prop_assert_eq!(got, want);
        }
    }

    #[test]
    fn shared_view_fractions() {
        let own = prefs(&[("a", 5), ("b", 3), ("c", 1)], 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(shared_view(&own, &mut rng), own.full_view());

        let none = prefs(&[("a", 5), ("b", 3), ("c", 1)], 0.0);
        assert!(shared_view(&none, &mut rng).is_empty());

        let half = prefs(&[("a", 5), ("b", 3), ("c", 1)], 0.5);
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let view = shared_view(&half, &mut rng);
            assert_eq!(view.len(), 2);
            for (k, v) in &view.vector {
                assert_eq!(half.get(k), Some(*v));
            }
        }
    }

    #[test]
    fn shared_count_handles_float_noise() {
        assert_eq!(shared_count(10, 0.3), 3);
        assert_eq!(shared_count(3, 0.5), 2);
        assert_eq!(shared_count(7, 1.0), 7);
        assert_eq!(shared_count(0, 0.5), 0);
    }

    #[test]
    fn resample_closure_over_own() {
        let own = prefs(&[("a", 5), ("b", 3)], 1.0);
        let store = SimilarityStore::new(DEFAULT_K).unwrap();
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let out = resample_neighborhood(&own, &store, DEFAULT_CAPACITY, 2, &mut rng);
            assert!(!out.is_empty());
            assert_eq!(out.total_weight(), 2);
            for (i, e) in out.iter() {
                match i.as_str() {
                    "a" => assert_eq!(e.value(), 5.0),
                    "b" => assert_eq!(e.value(), 3.0),
                    other => panic!("unexpected item {other}"),
                }
            }
        }
    }

    #[test]
    fn resample_empty_pool() {
        let own = prefs(&[], 1.0);
        let store = SimilarityStore::new(DEFAULT_K).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(resample_neighborhood(&own, &store, 10, 100, &mut rng).is_empty());
    }

    #[test]
    fn resample_truncates_to_capacity_by_weight_then_id() {
        let own = prefs(&[("a", 5), ("b", 4), ("c", 3), ("d", 2)], 1.0);
        let store = SimilarityStore::new(DEFAULT_K).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let out = resample_neighborhood(&own, &store, 2, 400, &mut rng);
        assert_eq!(out.len(), 2);
        assert_eq!(out.capacity(), 2);
        // replay the same stream without truncation and check the kept pair
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let full = resample_neighborhood(&own, &store, 10, 400, &mut rng);
        let mut ranked: Vec<(&ItemId, u32)> = full.iter().map(|(i, e)| (i, e.weight())).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let kept: Vec<&ItemId> = out.entries().keys().collect();
        let mut want: Vec<&ItemId> = ranked.iter().take(2).map(|(i, _)| *i).collect();
        want.sort();
        assert_eq!(kept, want);
    }

    #[test]
    fn resample_is_deterministic() {
        let own = prefs(&[("a", 5), ("b", 3), ("c", 4)], 0.7);
        let mut store = SimilarityStore::new(3).unwrap();
        store.admit(PeerId::new("q"), 0.8, nbhd(&[("x", 4.5, 3), ("y", 2.0, 1)]));
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            resample_neighborhood(&own, &store, 10, 50, &mut rng)
        };
        assert_eq!(run(9), run(9));
    }

    #[test]
    fn resample_frequencies_match_equal_pool_weights() {
        let own = prefs(&[("a", 5)], 1.0);
        let mut store = SimilarityStore::new(DEFAULT_K).unwrap();
        store.admit(PeerId::new("q"), 1.0, nbhd(&[("b", 1.0, 1)]));
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let out = resample_neighborhood(&own, &store, DEFAULT_CAPACITY, 10_000, &mut rng);
        let a = out.get(&item("a")).unwrap().weight() as f64 / 10_000.0;
        // multinomial oracle: pooled weights 1 (own) vs 1*1.0 (slot) -> p = 1/2
        let p = 1.0 / (1.0 + 1.0 * 1.0);
        assert!((a - p).abs() <= 0.02, "fraction on a = {a}");
        assert_eq!(out.total_weight(), 10_000);
    }

    #[test]
    fn resample_ignores_zero_score_slots() {
        let own = prefs(&[], 1.0);
        let mut store = SimilarityStore::new(DEFAULT_K).unwrap();
        store.admit(PeerId::new("q"), 0.0, nbhd(&[("b", 1.0, 1)]));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(resample_neighborhood(&own, &store, 10, 10, &mut rng).is_empty());
    }

    proptest! {
        #[test]
        fn resample_support_and_weight(
            own_items in prop::collection::btree_map(0u8..20, 1u8..=5, 0..8),
            snap_items in prop::collection::btree_map(10u8..40, (10u16..=50, 1u32..5), 0..8),
            score in 0.05f64..1.0,
            n_draws in 1usize..300,
            seed in any::<u64>(),
        ) {
            let mut own = PeerPreferenceList::new(PeerId::new("o"), 1.0).unwrap();
            for (k, v) in &own_items {
                own.rate(Rating::new(item(&format!("i{k}")), *v).unwrap());
            }
            let mut snap = empty_nbhd();
            for (k, (tenths, w)) in &snap_items {
                snap.insert(item(&format!("i{k}")), NeighborhoodEntry::new(*tenths as f64 / 10.0, *w).unwrap()).unwrap();
            }
            let mut store = SimilarityStore::new(3).unwrap();
            store.admit(PeerId::new("s"), score, snap.clone());
            let support: BTreeSet<ItemId> = own.ratings().keys().chain(snap.entries().keys()).cloned().collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let capacity = 500;
            let out = resample_neighborhood(&own, &store, capacity, n_draws, &mut rng);
            for (i, e) in out.iter() {
                prop_assert!(support.contains(i));
                prop_assert!((1.0..=5.0).contains(&e.value()));
            }
            if !support.is_empty() && support.len() <= capacity {
                prop_assert_eq!(out.total_weight(), n_draws as u64);
            }
        }
    }

    #[test]
    fn predict_simple() {
        let own = prefs(&[], 1.0);
        let n = nbhd(&[("x", 4.5, 2)]);
        assert_eq!(predict_ratings(&own, &n, 10), vec![Recommendation { item_id: item("x"), predicted: 4.5 }]);
    }

    #[test]
    fn predict_excludes_rated() {
        let own = prefs(&[("x", 2)], 1.0);
        assert!(predict_ratings(&own, &nbhd(&[("x", 4.5, 2)]), 10).is_empty());
    }

    /// Exhaustive oracle: try every permutation and keep the one whose
    /// sequence of (weight, value) keys is lexicographically largest.
    fn predict_oracle(entries: &[(&str, f64, u32)], top_n: usize) -> Vec<String> {
        fn permute(v: &mut Vec<usize>, k: usize, out: &mut Vec<Vec<usize>>) {
            if k == v.len() {
                out.push(v.clone());
                return;
            }
            for i in k..v.len() {
                v.swap(k, i);
                permute(v, k + 1, out);
                v.swap(k, i);
            }
        }
        let mut perms = Vec::new();
        permute(&mut (0..entries.len()).collect(), 0, &mut perms);
        let key = |p: &Vec<usize>| -> Vec<(u32, i64, std::cmp::Reverse<String>)> {
            p.iter()
                .map(|&i| {
                    let (id, v, w) = entries[i];
                    (w, (v * 10.0) as i64, std::cmp::Reverse(id.to_string()))
                })
                .collect()
        };
        let best = perms.iter().max_by(|a, b| key(a).cmp(&key(b))).unwrap();
        best.iter().take(top_n).map(|&i| entries[i].0.to_string()).collect()
    }

    #[test]
    fn predict_weight_major_order() {
        let entries = [("x", 4.0, 3), ("y", 5.0, 3), ("z", 5.0, 1)];
        let got: Vec<String> =
            predict_ratings(&prefs(&[], 1.0), &nbhd(&entries), 2).into_iter().map(|r| r.item_id.to_string()).collect();
        assert_eq!(got, predict_oracle(&entries, 2));
        assert_eq!(got, vec!["y", "x"]);
    }

    proptest! {
        #[test]
        fn predict_never_returns_rated(
            own_items in prop::collection::btree_set(0u8..15, 0..10),
            nb in prop::collection::btree_map(0u8..15, (10u16..=50, 1u32..6), 0..15),
            top_n in 1usize..20,
        ) {
            let mut own = PeerPreferenceList::new(PeerId::new("o"), 1.0).unwrap();
            for k in &own_items {
                own.rate(Rating::new(item(&format!("i{k}")), 3).unwrap());
            }
            let mut n = empty_nbhd();
            for (k, (t, w)) in &nb {
                n.insert(item(&format!("i{k}")), NeighborhoodEntry::new(*t as f64 / 10.0, *w).unwrap()).unwrap();
            }
            let recs = predict_ratings(&own, &n, top_n);
            prop_assert!(recs.len() <= top_n);
            for r in &recs {
                prop_assert!(!own.contains(&r.item_id));
            }
        }

        #[test]
        fn predict_matches_exhaustive_oracle(
            nb in prop::collection::btree_map(0u8..6, (10u16..=50, 1u32..4), 0..6),
            top_n in 1usize..7,
        ) {
            let names: Vec<String> = nb.keys().map(|k| format!("i{k}")).collect();
            let entries: Vec<(&str, f64, u32)> = nb
                .values()
                .zip(&names)
                .map(|((t, w), n)| (n.as_str(), *t as f64 / 10.0, *w))
                .collect();
            let got: Vec<String> = predict_ratings(&prefs(&[], 1.0), &nbhd(&entries), top_n)
                .into_iter()
                .map(|r| r.item_id.to_string())
                .collect();
            prop_assert_eq!(got, predict_oracle(&entries, top_n));
        }
    }

    #[test]
    fn random_peer_ids_are_uuid_shaped() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let id = PeerId::random(&mut rng);
        assert_eq!(id.as_str().len(), 36);
        assert_eq!(id.as_str().matches('-').count(), 4);
        let mut rng2 = ChaCha8Rng::seed_from_u64(5);
        assert_eq!(PeerId::random(&mut rng2), id);
    }
}
