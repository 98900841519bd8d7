//! Measurements over ground truth: item coverage, within/cross community
//! flow and relay reachability.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use super::events::{Event, EventLog};
use super::metrics::CoverageStats;
use super::World;
use crate::prefs::{ItemId, PeerId};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AnalysisError {
    #[error("flow ratio needs at least two communities, found {0}")]
    TooFewCommunities(usize),
}

/// Flow ratio value reported when no community-origin item reached any peer
/// outside its community.
pub const FLOW_RATIO_UNDEFINED: f64 = f64::INFINITY;

/// Fraction of peers whose neighborhood list holds `item`.
pub fn coverage(world: &World, item: &ItemId) -> f64 {
    if world.peers.is_empty() {
        return 0.0;
    }
    let holders = world.peers.iter().filter(|p| p.nbhd.contains(item)).count();
    holders as f64 / world.peers.len() as f64
}

/// Per community `c`: mean over `c`'s items of the fraction of `c` peers
/// holding it (`within`) and of the fraction of other peers holding it
/// (`cross`).
struct CommunityFlow {
    within: Vec<f64>,
    cross: Vec<f64>,
    overall: f64,
}

fn community_flow(world: &World) -> CommunityFlow {
    let truth = &world.truth;
    let n_comm = truth.community_items.len();
    let mut members = vec![0usize; n_comm];
    for &c in &truth.peer_community {
        members[c] += 1;
    }
    // holders[item] = (holders inside its community, holders outside)
    let mut holders: BTreeMap<&ItemId, (usize, usize)> = BTreeMap::new();
    for (peer, &pc) in world.peers.iter().zip(&truth.peer_community) {
        for item in peer.nbhd.entries().keys() {
            if let Some(&ic) = truth.item_community.get(item) {
                let h = holders.entry(item).or_default();
                if ic == pc {
                    h.0 += 1;
                } else {
                    h.1 += 1;
                }
            }
        }
    }
    let n_peers = world.peers.len();
    let mut within = vec![0.0; n_comm];
    let mut cross = vec![0.0; n_comm];
    let mut overall_sum = 0.0;
    let mut overall_items = 0usize;
    for (c, items) in truth.community_items.iter().enumerate() {
        if items.is_empty() {
            continue;
        }
        let inside = members[c];
        let outside = n_peers - inside;
        let (mut w, mut x) = (0.0, 0.0);
        for item in items {
            let (hi, ho) = holders.get(item).copied().unwrap_or_default();
            if inside > 0 {
                w += hi as f64 / inside as f64;
            }
            if outside > 0 {
                x += ho as f64 / outside as f64;
            }
            if n_peers > 0 {
                overall_sum += (hi + ho) as f64 / n_peers as f64;
            }
        }
        within[c] = w / items.len() as f64;
        cross[c] = x / items.len() as f64;
        overall_items += items.len();
    }
    CommunityFlow { within, cross, overall: if overall_items > 0 { overall_sum / overall_items as f64 } else { 0.0 } }
}

/// Coverage of community-origin items: overall mean, mean within the
/// origin community and mean outside it.
pub fn community_coverage(world: &World) -> CoverageStats {
    let flow = community_flow(world);
    let k = flow.within.len().max(1) as f64;
    CoverageStats {
        mean: flow.overall,
        within: flow.within.iter().sum::<f64>() / k,
        cross: flow.cross.iter().sum::<f64>() / k,
    }
}

/// Mean over communities of within-community coverage divided by
/// cross-community coverage of that community's items. Returns
/// [`FLOW_RATIO_UNDEFINED`] when any denominator is zero.
pub fn flow_ratio(world: &World) -> Result<f64, AnalysisError> {
    let n = world.truth.community_items.len();
    if n < 2 {
        return Err(AnalysisError::TooFewCommunities(n));
    }
    let flow = community_flow(world);
    let mut sum = 0.0;
    for (w, x) in flow.within.iter().zip(&flow.cross) {
        if *x == 0.0 {
            return Ok(FLOW_RATIO_UNDEFINED);
        }
        sum += w / x;
    }
    Ok(sum / n as f64)
}

/// Counts (receiver, item) pairs where the receiver's neighborhood list holds
/// an item it does not rate itself and that no peer it was ever in range of
/// rates either. Contacts are taken from the event log.
pub fn relay_reachability(world: &World, log: &EventLog) -> u64 {
    let mut met: BTreeSet<(&PeerId, &PeerId)> = BTreeSet::new();
    for e in log.events() {
        if let Event::ContactBegin { a, b, .. } = e {
            met.insert((a.min(b), a.max(b)));
        }
    }
    relay_reachability_with(world, |i, j| {
        let (a, b) = (&world.peers[i].pseudo_id, &world.peers[j].pseudo_id);
        met.contains(&(a.min(b), a.max(b)))
    })
}

pub(crate) fn relay_reachability_with(world: &World, met: impl Fn(usize, usize) -> bool) -> u64 {
    // item -> indices of peers rating it
    let mut origins: BTreeMap<&ItemId, Vec<usize>> = BTreeMap::new();
    for (i, p) in world.peers.iter().enumerate() {
        for item in p.prefs.ratings().keys() {
            origins.entry(item).or_default().push(i);
        }
    }
    let mut count = 0;
    for (r, peer) in world.peers.iter().enumerate() {
        for item in peer.nbhd.entries().keys() {
            if peer.prefs.contains(item) {
                continue;
            }
            let Some(from) = origins.get(item) else { continue };
            if from.iter().all(|&o| o != r && !met(r, o)) {
                count += 1;
            }
        }
    }
    count
}
