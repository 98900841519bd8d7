//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Runs without the libtest harness so the lines always
//! reach the console.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use pfsim_cli::simulate::{simulate, SimulateOptions};
use pfsim_core::prefs::{
    resample_neighborhood_weighted, NeighborhoodEntry, NeighborhoodPreferenceList, PeerPreferenceList, Rating,
    SimilarityStore,
};
use pfsim_core::radio::{
    energy_tick, sample_delay, step_session, EnergyState, LinkSession, Outcome, RadioParams, SharingMode,
};
use pfsim_core::scenario::PRESETS;
use pfsim_core::sim::{self, World};
use pfsim_core::wire::{self, ContextStamp, ExchangeMessage};
use pfsim_core::{preset, run, ItemId, PeerId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

type Check = Result<String, String>;

/// Name, check and time budget of one criterion.
type Criterion = (&'static str, fn() -> Check, Duration);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

/// 1. Monte-Carlo success frequency at the eight measured anchors.
fn success_frequencies() -> Check {
    let radio = RadioParams::default();
    let cases = [
        (3.0, false, 1.00),
        (3.0, true, 1.00),
        (6.0, false, 0.80),
        (6.0, true, 0.70),
        (10.0, false, 0.20),
        (10.0, true, 0.00),
        (12.0, false, 0.00),
        (12.0, true, 0.00),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut got = Vec::new();
    for (d, obstacles, want) in cases {
        let mut ok = 0;
        for _ in 0..10_000 {
            let mut s = LinkSession::new(PeerId::new("a"), PeerId::new("b"), d, obstacles);
            while !s.is_closed() {
                s = step_session(&s, 1.0, true, &radio, &mut rng);
            }
            ok += (s.outcome() == Some(Outcome::Success)) as u32;
        }
        let freq = ok as f64 / 10_000.0;
        ensure((freq - want).abs() <= 0.03, || format!("{d} m obstacles={obstacles}: {freq:.3} vs {want:.2}"))?;
        got.push(format!("{freq:.3}"));
    }
    Ok(format!("frequencies [{}]", got.join(", ")))
}

/// 2. Connection delay bounds and mean.
fn delay() -> Check {
    let radio = RadioParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let d: Vec<f64> = (0..10_000).map(|_| sample_delay(&radio, &mut rng)).collect();
    ensure(d.iter().all(|x| (11.0..=41.0).contains(x)), || "delay outside [11, 41] s".into())?;
    let mean = d.iter().sum::<f64>() / d.len() as f64;
    ensure((25.5..=26.5).contains(&mean), || format!("mean {mean:.3} s"))?;
    Ok(format!("all 10000 in [11, 41] s, mean {mean:.2} s"))
}

/// 3. Size of a 1000-record neighborhood message.
fn bulk_size() -> Check {
    let mut nbhd = NeighborhoodPreferenceList::new(1000).unwrap();
    for i in 0..1000 {
        nbhd.insert(ItemId::new(format!("tt{i:07}")).unwrap(), NeighborhoodEntry::new(3.5, 12).unwrap()).unwrap();
    }
    let msg = ExchangeMessage::build(
        PeerId::new("5f0c8c52-1a3e-4c1e-9a43-2b7f1d7c9e10"),
        ContextStamp { x: 12.5, y: 40.0, t: 3600.0 },
        &Default::default(),
        &nbhd,
    );
    let bytes = wire::encode(&msg).map_err(|e| e.to_string())?;
    ensure(wire::payload_size(&msg) == bytes.len(), || "payload_size disagrees with encoding".into())?;
    let header = bytes.iter().position(|&b| b == b'\n').unwrap() + 1;
    ensure(bytes.len() - header == 100_000, || format!("record bytes {}", bytes.len() - header))?;
    let rel = (bytes.len() as f64 - 100_000.0).abs() / 100_000.0;
    ensure(rel <= 0.05, || format!("{} bytes", bytes.len()))?;
    Ok(format!("{} bytes = 100000 + {header} header", bytes.len()))
}

/// Criterion 4: four co-located peers end up with each other's shared
/// records, byte for byte.
fn four_device() -> Check {
    let out = run(&preset("four-device").unwrap(), 0).map_err(|e| e.to_string())?;
    let w = &out.world;
    ensure(w.peers.len() == 4, || "expected four peers".into())?;
    let mut checked = 0;
    for (i, peer) in w.peers.iter().enumerate() {
        for (j, other) in w.peers.iter().enumerate() {
            if i == j {
                continue;
            }
            let got = peer
                .inbox
                .iter()
                .find(|r| r.sender == other.pseudo_id)
                .ok_or_else(|| format!("peer {i} never heard from peer {j}"))?;
            ensure(got.similarity == other.prefs.full_view(), || format!("peer {i} holds corrupted data of {j}"))?;
            checked += got.similarity.vector.len();
        }
        // what this peer sends survives the wire unchanged
        let msg = peer.clone().outgoing_message(w.time_s());
        let bytes = wire::encode(&msg).map_err(|e| e.to_string())?;
        let back = wire::decode(&bytes).map_err(|e| e.to_string())?;
        ensure(back == msg, || format!("peer {i}: decode(encode(m)) != m"))?;
        ensure(wire::encode(&back).unwrap() == bytes, || format!("peer {i}: re-encoding differs"))?;
    }
    Ok(format!("{} sessions succeeded, {checked} records verified", w.counters.success))
}

/// 5. Passing pedestrians never connect; café visitors do.
fn pedestrian_vs_cafe() -> Check {
    let (walk, cafe) = (preset("pedestrian-pass").unwrap(), preset("cafe").unwrap());
    let mut walk_success = 0;
    let mut cafe_runs = 0;
    for seed in 0..10 {
        walk_success += run(&walk, seed).map_err(|e| e.to_string())?.world.counters.success;
        cafe_runs += (run(&cafe, seed).map_err(|e| e.to_string())?.world.counters.success > 0) as u32;
    }
    ensure(walk_success == 0, || format!("pedestrian-pass had {walk_success} successes"))?;
    ensure(cafe_runs >= 9, || format!("cafe succeeded in {cafe_runs}/10 seeds"))?;
    Ok(format!("pedestrian-pass 0 successes, cafe {cafe_runs}/10 seeds"))
}

/// 6. Ten hours of battery drain with sharing on and off.
fn battery() -> Check {
    let radio = RadioParams::default();
    let drain = |mode| {
        let mut e = EnergyState::full(mode);
        for _ in 0..36_000 {
            e = energy_tick(e, 1.0 / 3600.0, &radio);
        }
        100.0 - e.battery_pct
    };
    let (on, off) = (drain(SharingMode::SharingOn), drain(SharingMode::SharingOff));
    ensure((on - 57.7).abs() <= 0.1, || format!("sharing on drained {on:.3}%"))?;
    ensure((off - 5.0).abs() <= 0.1, || format!("sharing off drained {off:.3}%"))?;
    Ok(format!("on {on:.2}%, off {off:.2}%"))
}

/// Criterion 7: community items spread faster inside their community
/// and reach strangers through relays.
fn flow() -> Check {
    let c = preset("two-communities").unwrap();
    let (mut flow_ok, mut relay_ok) = (0, 0);
    let mut ratios = Vec::new();
    for seed in 0..10 {
        let out = run(&c, seed).map_err(|e| e.to_string())?;
        let ratio = sim::flow_ratio(&out.world).map_err(|e| e.to_string())?;
        let relay = sim::relay_reachability(&out.world, &out.events);
        flow_ok += (ratio > 1.0) as u32;
        relay_ok += (relay > 0) as u32;
        ratios.push(format!("{ratio:.2}"));
    }
    ensure(flow_ok >= 9, || format!("flow ratio > 1 in {flow_ok}/10 seeds"))?;
    ensure(relay_ok >= 9, || format!("relay reachability > 0 in {relay_ok}/10 seeds"))?;
    Ok(format!("flow > 1 in {flow_ok}/10 [{}], relay > 0 in {relay_ok}/10", ratios.join(", ")))
}

/// 8. Equal seeds give byte-identical artifacts for every preset.
fn determinism() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    for name in PRESETS {
        let config = preset(name).unwrap();
        let opts = SimulateOptions { seed: 7, ticks: None, plots: false };
        let (a, b) = (tmp.path().join(format!("{name}-a")), tmp.path().join(format!("{name}-b")));
        simulate(&config, &opts, &a).map_err(|e| e.to_string())?;
        simulate(&config, &opts, &b).map_err(|e| e.to_string())?;
        for file in ["metrics.csv", "events.jsonl"] {
            let (x, y) = (fs::read(a.join(file)).unwrap(), fs::read(b.join(file)).unwrap());
            ensure(x == y, || format!("{name}: {file} differs"))?;
        }
    }
    Ok(format!("{} presets, metrics.csv and events.jsonl identical", PRESETS.len()))
}

/// Slow reference model of the similarity store.
#[derive(Default)]
struct StoreOracle {
    /// (peer, score, arrival)
    slots: Vec<(u32, f64, u64)>,
    next: u64,
}

impl StoreOracle {
    fn offer(&mut self, k: usize, peer: u32, score: f64) -> bool {
        if let Some(s) = self.slots.iter_mut().find(|s| s.0 == peer) {
            s.1 = score;
            return true;
        }
        if self.slots.len() == k {
            // the weakest slot: lowest score, latest arrival among equals
            let (idx, weakest) = self
                .slots
                .iter()
                .enumerate()
                .min_by(|a, b| a.1 .1.total_cmp(&b.1 .1).then(b.1 .2.cmp(&a.1 .2)))
                .map(|(i, s)| (i, s.1))
                .unwrap();
            if score <= weakest {
                return false;
            }
            self.slots.remove(idx);
        }
        self.slots.push((peer, score, self.next));
        self.next += 1;
        true
    }

    fn members(&self) -> BTreeMap<String, f64> {
        self.slots.iter().map(|s| (format!("p{}", s.0), s.1)).collect()
    }
}

/// 9. Invariant suite.
fn invariants() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(9);

    // similarity store against the oracle on 100-event histories
    for _ in 0..500 {
        let k = rng.random_range(1..=8);
        let mut store = SimilarityStore::new(k).unwrap();
        let mut oracle = StoreOracle::default();
        let empty = NeighborhoodPreferenceList::new(1).unwrap();
        for _ in 0..100 {
            let peer = rng.random_range(0..20u32);
            // coarse scores so ties happen
            let score = rng.random_range(0..=10) as f64 / 10.0;
            let admitted = store.admit(PeerId::new(format!("p{peer}")), score, empty.clone());
            ensure(admitted == oracle.offer(k, peer, score), || "store admission differs from oracle".into())?;
            ensure(store.len() <= k, || format!("store holds {} > k = {k}", store.len()))?;
        }
        let got: BTreeMap<String, f64> = store.slots().iter().map(|s| (s.peer.as_str().to_string(), s.score)).collect();
        ensure(got == oracle.members(), || "store contents differ from oracle".into())?;
    }

    // neighborhood capacity at every tick of a busy world
    let mut c = preset("two-communities").unwrap();
    c.duration_s = 1200.0;
    c.filter.capacity = 20;
    let mut world = World::new(c.clone(), 3).map_err(|e| e.to_string())?;
    for _ in 0..c.ticks() {
        world.step().map_err(|e| e.to_string())?;
        ensure(world.peers.iter().all(|p| p.nbhd.len() <= 20), || format!("capacity exceeded at tick {}", world.tick))?;
    }

    // resampling: support closure and goodness of fit
    let mut own = PeerPreferenceList::new(PeerId::new("me"), 1.0).unwrap();
    for (i, v) in [5u8, 4, 2].into_iter().enumerate() {
        own.rate(Rating::new(ItemId::new(format!("own{i}")).unwrap(), v).unwrap());
    }
    let mut store = SimilarityStore::new(3).unwrap();
    let mut pool: BTreeMap<String, f64> = (0..3).map(|i| (format!("own{i}"), 1.0)).collect();
    for (peer, score, items) in [("x", 0.8, [("a", 6u32), ("b", 2)]), ("y", 0.5, [("b", 4), ("c", 10)])] {
        let mut snap = NeighborhoodPreferenceList::new(10).unwrap();
        for (id, w) in items {
            snap.insert(ItemId::new(id).unwrap(), NeighborhoodEntry::new(3.0, w).unwrap()).unwrap();
            *pool.entry(id.to_string()).or_default() += w as f64 * score;
        }
        store.admit(PeerId::new(peer), score, snap);
    }
    let total: f64 = pool.values().sum();
    let draws = 10_000;
    let got = resample_neighborhood_weighted(&own, &store, 100, draws, 1.0, &mut rng);
    ensure(got.iter().all(|(item, _)| pool.contains_key(item.as_str())), || {
        "resampled an item outside the pool".into()
    })?;
    let stat: f64 = pool
        .iter()
        .map(|(id, w)| {
            let e = w / total * draws as f64;
            let o = got.get(&ItemId::new(id.as_str()).unwrap()).map_or(0, |x| x.weight()) as f64;
            (o - e).powi(2) / e
        })
        .sum();
    let p = 1.0 - ChiSquared::new((pool.len() - 1) as f64).unwrap().cdf(stat);
    ensure(p > 0.01, || format!("goodness of fit rejected, p = {p:.4}"))?;

    // decode fuzzing: random bytes and mutated valid encodings
    let mut nbhd = NeighborhoodPreferenceList::new(3).unwrap();
    nbhd.insert(ItemId::new("tt0000001").unwrap(), NeighborhoodEntry::new(4.5, 3).unwrap()).unwrap();
    let sim_data = own.full_view();
    let valid = wire::encode(&ExchangeMessage::build(
        PeerId::new("6a1f9a2e-7d3b-4c55-8e0f-1b2c3d4e5f60"),
        ContextStamp { x: 1.5, y: 2.0, t: 30.0 },
        &sim_data,
        &nbhd,
    ))
    .unwrap();
    let mut accepted = 0;
    for i in 0..100_000 {
        let input: Vec<u8> = if i % 2 == 0 {
            let len = rng.random_range(0..512);
            (0..len).map(|_| rng.random()).collect()
        } else {
            let mut v = valid.clone();
            for _ in 0..rng.random_range(1..4) {
                let at = rng.random_range(0..v.len());
                v[at] = rng.random_range(b' '..=b'~');
            }
            v
        };
        let outcome =
            panic::catch_unwind(|| wire::decode(&input)).map_err(|_| format!("decode panicked on input {i}"))?;
        if let Ok(msg) = outcome {
            accepted += 1;
            ensure(wire::encode(&msg).ok().as_deref() == Some(&input[..]), || "accepted a non-canonical input".into())?;
        }
    }
    Ok(format!("store oracle 500x100 events, capacity held, GoF p = {p:.3}, 100000 fuzz inputs ({accepted} accepted)"))
}

fn main() -> ExitCode {
    // libtest arguments such as --nocapture or a name filter are ignored
    let criteria: [Criterion; 9] = [
        ("measured success frequencies", success_frequencies, Duration::from_secs(5)),
        ("connection delay model", delay, Duration::from_secs(1)),
        ("bulk message size", bulk_size, Duration::from_secs(1)),
        ("lossless four-device exchange", four_device, Duration::from_secs(5)),
        ("pedestrian vs cafe", pedestrian_vs_cafe, Duration::from_secs(10)),
        ("battery drain", battery, Duration::from_secs(5)),
        ("two-community flow and relay", flow, Duration::from_secs(120)),
        ("determinism", determinism, Duration::from_secs(60)),
        ("invariant suite", invariants, Duration::from_secs(60)),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, check, budget)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| Err("panicked".into()));
        let elapsed = start.elapsed();
        let result = result.and_then(|detail| {
            if elapsed <= budget {
                Ok(detail)
            } else {
                Err(format!("{detail}; took {elapsed:.1?}, budget {budget:?}"))
            }
        });
        match result {
            Ok(detail) => println!("criterion {}: PASS  {name} ({elapsed:.2?}): {detail}", i + 1),
            Err(reason) => {
                failed += 1;
                println!("criterion {}: FAIL  {name} ({elapsed:.2?}): {reason}", i + 1);
            }
        }
    }
    let _ = panic::take_hook();
    println!("acceptance: {} passed, {failed} failed", 9 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
