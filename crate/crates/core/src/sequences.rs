//! Self-, cross- and mixed-propagation sequences.
//!
//! Cross sequences come from backward-in-time random walks: from the anchor
//! cascade's last observed promoter, each hop picks uniformly among the
//! diffusion events of competing cascades that touch the current promoter and
//! happened no later than the current time, then moves to the other endpoint.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::compgraph::CompetitionGraph;
use crate::error::{Error, Result};
use crate::store::{CascadeId, CascadeStore, PromoterId};

pub const DEFAULT_LMAX: usize = 10;
pub const DEFAULT_TAU2: usize = 5;
pub const DEFAULT_TAU3: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SequenceKind {
    SelfPropagation,
    Cross,
    Mixed,
}

/// Fixed-capacity, front-padded `(promoter, time)` sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropagationSequence {
    pub kind: SequenceKind,
    pub promoters: Vec<PromoterId>,
    pub times: Vec<f64>,
    pub mask: Vec<bool>,
}

impl PropagationSequence {
    /// Keeps the latest `capacity` of the chronological `entries` and pads the
    /// front with `(PAD, pad_time)`.
    pub fn from_entries(kind: SequenceKind, capacity: usize, entries: &[(PromoterId, f64)], pad_time: f64) -> Self {
        let kept = &entries[entries.len().saturating_sub(capacity)..];
        let pads = capacity - kept.len();
        let mut promoters = Vec::with_capacity(capacity);
        let mut times = Vec::with_capacity(capacity);
        let mut mask = Vec::with_capacity(capacity);
        for _ in 0..pads {
            promoters.push(PromoterId::PAD);
            times.push(pad_time);
            mask.push(false);
        }
        for &(p, t) in kept {
            promoters.push(p);
            times.push(t);
            mask.push(true);
        }
        PropagationSequence { kind, promoters, times, mask }
    }

    pub fn capacity(&self) -> usize {
        self.mask.len()
    }

    pub fn real_len(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn is_empty(&self) -> bool {
        self.real_len() == 0
    }

    pub fn real_entries(&self) -> impl Iterator<Item = (PromoterId, f64)> + '_ {
        self.mask.iter().zip(self.promoters.iter().zip(&self.times)).filter(|(m, _)| **m).map(|(_, (&p, &t))| (p, t))
    }
}

/// The `lmax` most recent `(src, time)` pairs among the observed events, in
/// chronological order.
pub fn self_sequence(store: &CascadeStore, cascade: CascadeId, cutoff: f64, lmax: usize) -> Result<PropagationSequence> {
    let range = store.observed_range(cascade, cutoff)?;
    self_sequence_from(store, cascade, range, cutoff, lmax)
}

/// Same as [`self_sequence`] over an explicit observed range of the
/// cascade's event list.
pub fn self_sequence_from(
    store: &CascadeStore,
    cascade: CascadeId,
    observed: core::ops::Range<usize>,
    cutoff: f64,
    lmax: usize,
) -> Result<PropagationSequence> {
    if lmax == 0 {
        return Err(Error::InvalidParameter { name: "lmax", reason: "must be at least 1".into() });
    }
    let events = &store.cascade_events(cascade)?[observed];
    if events.is_empty() {
        return Err(Error::NoObservedEvents { cascade: cascade.0, cutoff });
    }
    let tail = &events[events.len().saturating_sub(lmax)..];
    let entries: Vec<(PromoterId, f64)> = tail
        .iter()
        .map(|&e| {
            let ev = &store.diffusion()[e as usize];
            (ev.src, ev.time)
        })
        .collect();
    Ok(PropagationSequence::from_entries(SequenceKind::SelfPropagation, lmax, &entries, cutoff))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum WalkStart {
    /// Target of the anchor cascade's latest observed event.
    #[default]
    LastTarget,
    LastSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WalkParams {
    pub walks: usize,
    pub hops: usize,
    pub start: WalkStart,
    pub seed: u64,
}

impl Default for WalkParams {
    fn default() -> Self {
        WalkParams { walks: DEFAULT_TAU2, hops: DEFAULT_TAU3, start: WalkStart::LastTarget, seed: 0 }
    }
}

impl WalkParams {
    pub fn capacity(&self) -> usize {
        self.walks * self.hops
    }
}

/// Per-promoter list of incident diffusion events, sorted by time.
#[derive(Debug, Clone)]
pub struct WalkIndex {
    offsets: Vec<usize>,
    events: Vec<u32>,
}

impl WalkIndex {
    pub fn new(store: &CascadeStore) -> Self {
        let slots = store.promoter_slots();
        let mut degree = alloc::vec![0usize; slots + 1];
        for e in store.diffusion() {
            degree[e.src.index() + 1] += 1;
            if e.tgt != e.src {
                degree[e.tgt.index() + 1] += 1;
            }
        }
        for p in 0..slots {
            degree[p + 1] += degree[p];
        }
        let offsets = degree;
        let mut fill = offsets.clone();
        let mut events = alloc::vec![0u32; offsets[slots]];
        // the global stream is chronological, so every list ends up sorted
        for (i, e) in store.diffusion().iter().enumerate() {
            events[fill[e.src.index()]] = i as u32;
            fill[e.src.index()] += 1;
            if e.tgt != e.src {
                events[fill[e.tgt.index()]] = i as u32;
                fill[e.tgt.index()] += 1;
            }
        }
        WalkIndex { offsets, events }
    }

    pub fn incident(&self, p: PromoterId) -> &[u32] {
        &self.events[self.offsets[p.index()]..self.offsets[p.index() + 1]]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WalkStep {
    pub event: u32,
    pub cascade: CascadeId,
    pub promoter: PromoterId,
    pub time: f64,
}

/// Recorded hops of one walk, in walk order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WalkTrace {
    pub steps: Vec<WalkStep>,
}

fn walk_rng(seed: u64, cascade: CascadeId, walk: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((cascade.0 as u64) << 32) | walk as u64);
    rng
}

/// Time and start promoter of the anchor cascade at `cutoff`.
fn anchor(store: &CascadeStore, cascade: CascadeId, cutoff: f64, start: WalkStart) -> Result<Option<(PromoterId, f64)>> {
    let events = store.cascade_events(cascade)?;
    let range = store.observed_range(cascade, cutoff)?;
    Ok(range.end.checked_sub(1).map(|last| {
        let ev = &store.diffusion()[events[last] as usize];
        let node = match start {
            WalkStart::LastTarget => ev.tgt,
            WalkStart::LastSource => ev.src,
        };
        (node, ev.time)
    }))
}

/// Candidate events for one hop from `node` at `t_current`.
pub fn hop_candidates(
    store: &CascadeStore,
    index: &WalkIndex,
    graph: &CompetitionGraph,
    anchor_cascade: CascadeId,
    node: PromoterId,
    t_current: f64,
    used: &[u32],
    out: &mut Vec<u32>,
) {
    out.clear();
    let Ok(competitors) = graph.neighbor_ids(anchor_cascade) else { return };
    if competitors.is_empty() {
        return;
    }
    let incident = index.incident(node);
    let upto = incident.partition_point(|&e| store.diffusion()[e as usize].time <= t_current);
    for &e in &incident[..upto] {
        if used.contains(&e) {
            continue;
        }
        let cascade = store.diffusion()[e as usize].cascade;
        if competitors.binary_search(&cascade).is_ok() {
            out.push(e);
        }
    }
}

/// Runs up to `params.walks` walks of at most `params.hops` steps each and
/// returns the per-walk traces (empty walks included).
pub fn walk_traces(
    store: &CascadeStore,
    index: &WalkIndex,
    graph: &CompetitionGraph,
    cascade: CascadeId,
    cutoff: f64,
    params: &WalkParams,
) -> Result<Vec<WalkTrace>> {
    let Some((start_node, start_time)) = anchor(store, cascade, cutoff, params.start)? else {
        return Ok(Vec::new());
    };
    let mut traces = Vec::with_capacity(params.walks);
    let mut candidates = Vec::new();
    let mut used = Vec::with_capacity(params.hops);
    for w in 0..params.walks {
        let mut rng = walk_rng(params.seed, cascade, w);
        let mut trace = WalkTrace::default();
        let (mut node, mut t_current) = (start_node, start_time);
        used.clear();
        for _ in 0..params.hops {
            hop_candidates(store, index, graph, cascade, node, t_current, &used, &mut candidates);
            if candidates.is_empty() {
                break;
            }
            let e = candidates[rng.random_range(0..candidates.len())];
            let ev = &store.diffusion()[e as usize];
            let other = if ev.src == node { ev.tgt } else { ev.src };
            trace.steps.push(WalkStep { event: e, cascade: ev.cascade, promoter: other, time: ev.time });
            used.push(e);
            node = other;
            t_current = ev.time;
        }
        traces.push(trace);
    }
    Ok(traces)
}

fn merge_traces(traces: &[WalkTrace]) -> Vec<(PromoterId, f64)> {
    let mut entries: Vec<(PromoterId, f64)> =
        traces.iter().flat_map(|t| t.steps.iter().map(|s| (s.promoter, s.time))).collect();
    entries.sort_by(|a, b| a.1.total_cmp(&b.1));
    entries
}

/// Cross-propagation sequence of capacity `walks * hops`.
pub fn temporal_walks(
    store: &CascadeStore,
    index: &WalkIndex,
    graph: &CompetitionGraph,
    cascade: CascadeId,
    cutoff: f64,
    params: &WalkParams,
) -> Result<PropagationSequence> {
    if params.walks == 0 || params.hops == 0 {
        return Err(Error::InvalidParameter { name: "tau2/tau3", reason: "must be at least 1".into() });
    }
    let traces = walk_traces(store, index, graph, cascade, cutoff, params)?;
    let entries = merge_traces(&traces);
    Ok(PropagationSequence::from_entries(SequenceKind::Cross, params.capacity(), &entries, cutoff))
}

/// Self and walk-collected entries merged into one chronological sequence of
/// capacity `lmax + walks * hops`.
pub fn mixed_sequence(
    store: &CascadeStore,
    index: &WalkIndex,
    graph: &CompetitionGraph,
    cascade: CascadeId,
    cutoff: f64,
    lmax: usize,
    params: &WalkParams,
) -> Result<PropagationSequence> {
    let own = self_sequence(store, cascade, cutoff, lmax)?;
    let cross = temporal_walks(store, index, graph, cascade, cutoff, params)?;
    Ok(mix(&own, &cross, cutoff))
}

pub fn mix(own: &PropagationSequence, cross: &PropagationSequence, cutoff: f64) -> PropagationSequence {
    assert!(!own.is_empty(), "a mixed sequence needs at least one self entry");
    let mut entries: Vec<(PromoterId, f64)> = own.real_entries().chain(cross.real_entries()).collect();
    entries.sort_by(|a, b| a.1.total_cmp(&b.1));
    PropagationSequence::from_entries(SequenceKind::Mixed, own.capacity() + cross.capacity(), &entries, cutoff)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compgraph::{build_competition_graph, SimilarityKind};
    use crate::store::StoreBuilder;
    use alloc::collections::BTreeSet;
    use alloc::format;
    use alloc::vec;
    use proptest::prelude::*;

    #[test]
    fn short_self_sequence_is_front_padded() {
        let mut b = StoreBuilder::new();
        b.add_diffusion("c", "a", "b", 1.0, None).unwrap();
        b.add_diffusion("c", "c", "d", 2.0, None).unwrap();
        let store = b.build();
        let seq = self_sequence(&store, CascadeId(0), 5.0, DEFAULT_LMAX).unwrap();
        assert_eq!(seq.capacity(), 10);
        assert_eq!(seq.mask.iter().filter(|m| !**m).count(), 8);
        let real: Vec<(&str, f64)> = seq.real_entries().map(|(p, t)| (store.promoter_name(p), t)).collect();
        assert_eq!(real, [("a", 1.0), ("c", 2.0)]);
        assert!(seq.promoters[..8].iter().all(|&p| p == PromoterId::PAD));
        assert!(seq.times[..8].iter().all(|&t| t == 5.0));
    }

    #[test]
    fn long_self_sequence_keeps_latest() {
        let mut b = StoreBuilder::new();
        for k in 0..15 {
            b.add_diffusion("c", &format!("s{k}"), "t", k as f64, None).unwrap();
        }
        let store = b.build();
        let seq = self_sequence(&store, CascadeId(0), 100.0, 10).unwrap();
        let names: Vec<String> = seq.real_entries().map(|(p, _)| store.promoter_name(p).into()).collect();
        let expected: Vec<String> = (5..15).map(|k| format!("s{k}")).collect();
        assert_eq!(names, expected);
        assert!(self_sequence(&store, CascadeId(0), -1.0, 10).is_err());
    }

    #[test]
    fn walk_defaults() {
        let p = WalkParams::default();
        assert_eq!((p.walks, p.hops, p.capacity()), (5, 10, 50));
    }

    #[test]
    fn isolated_cascade_has_empty_cross_sequence() {
        let mut b = StoreBuilder::new();
        b.add_diffusion("a", "p", "q", 1.0, None).unwrap();
        b.add_diffusion("b", "x", "y", 1.0, None).unwrap();
        let store = b.build();
        let g = build_competition_graph(&store, 2.0, 0.1, SimilarityKind::Jaccard).unwrap();
        let idx = WalkIndex::new(&store);
        let seq = temporal_walks(&store, &idx, &g, CascadeId(0), 2.0, &WalkParams::default()).unwrap();
        assert!(seq.is_empty());
        assert_eq!(seq.capacity(), 50);
        let mixed = mixed_sequence(&store, &idx, &g, CascadeId(0), 2.0, 10, &WalkParams::default()).unwrap();
        let own = self_sequence(&store, CascadeId(0), 2.0, 10).unwrap();
        assert_eq!(mixed.real_entries().collect::<Vec<_>>(), own.real_entries().collect::<Vec<_>>());
    }

    /// Two cascades sharing promoters such that each hop has exactly one
    /// candidate: anchor "a" ends at q (t=9); competitor "b" has q-r (t=8),
    /// r-s (t=7), s-t (t=6).
    fn forced_path_store() -> CascadeStore {
        let mut b = StoreBuilder::new();
        b.add_diffusion("a", "p", "q", 9.0, None).unwrap();
        b.add_diffusion("a", "r", "p", 8.5, None).unwrap();
        b.add_diffusion("b", "q", "r", 8.0, None).unwrap();
        b.add_diffusion("b", "r", "s", 7.0, None).unwrap();
        b.add_diffusion("b", "s", "t", 6.0, None).unwrap();
        b.build()
    }

    /// Exhaustive enumeration of every feasible walk of at most `hops` steps.
    fn enumerate_walks(
        store: &CascadeStore,
        graph: &CompetitionGraph,
        anchor_cascade: CascadeId,
        node: PromoterId,
        t: f64,
        hops: usize,
        used: &mut Vec<u32>,
        path: &mut Vec<(PromoterId, f64)>,
        out: &mut BTreeSet<Vec<(u32, u64)>>,
    ) {
        let competitors = graph.neighbor_ids(anchor_cascade).unwrap();
        let mut cands = Vec::new();
        if hops > 0 {
            for (i, e) in store.diffusion().iter().enumerate() {
                let i = i as u32;
                if (e.src == node || e.tgt == node) && e.time <= t && !used.contains(&i) && competitors.contains(&e.cascade) {
                    cands.push(i);
                }
            }
        }
        if cands.is_empty() {
            out.insert(path.iter().map(|(p, t)| (p.0, t.to_bits())).collect());
            return;
        }
        for e in cands {
            let ev = &store.diffusion()[e as usize];
            let other = if ev.src == node { ev.tgt } else { ev.src };
            used.push(e);
            path.push((other, ev.time));
            enumerate_walks(store, graph, anchor_cascade, other, ev.time, hops - 1, used, path, out);
            path.pop();
            used.pop();
        }
    }

    fn support(store: &CascadeStore, cascade: CascadeId, cutoff: f64, hops: usize, seeds: u64) -> (BTreeSet<Vec<(u32, u64)>>, BTreeSet<Vec<(u32, u64)>>) {
        let g = build_competition_graph(store, cutoff, 0.1, SimilarityKind::Jaccard).unwrap();
        let idx = WalkIndex::new(store);
        let (node, t) = anchor(store, cascade, cutoff, WalkStart::LastTarget).unwrap().unwrap();
        let mut expected = BTreeSet::new();
        enumerate_walks(store, &g, cascade, node, t, hops, &mut Vec::new(), &mut Vec::new(), &mut expected);
        let mut sampled = BTreeSet::new();
        for seed in 0..seeds {
            let params = WalkParams { walks: 3, hops, start: WalkStart::LastTarget, seed };
            for trace in walk_traces(store, &idx, &g, cascade, cutoff, &params).unwrap() {
                sampled.insert(trace.steps.iter().map(|s| (s.promoter.0, s.time.to_bits())).collect());
            }
        }
        (expected, sampled)
    }

    #[test]
    fn forced_path_matches_enumeration() {
        let store = forced_path_store();
        let (expected, sampled) = support(&store, CascadeId(0), 10.0, 10, 20);
        assert_eq!(expected.len(), 1);
        assert_eq!(sampled, expected);
        let path = expected.iter().next().unwrap();
        let names: Vec<&str> = path.iter().map(|&(p, _)| store.promoter_name(PromoterId(p))).collect();
        assert_eq!(names, ["r", "s", "t"]);
    }

    #[test]
    fn branching_support_matches_enumeration() {
        let mut b = StoreBuilder::new();
        b.add_diffusion("a", "p", "q", 9.0, None).unwrap();
        b.add_diffusion("a", "z", "p", 8.5, None).unwrap();
        b.add_diffusion("b", "q", "r", 8.0, None).unwrap();
        b.add_diffusion("b", "q", "s", 7.0, None).unwrap();
        b.add_diffusion("b", "r", "s", 6.0, None).unwrap();
        b.add_diffusion("c", "s", "z", 5.0, None).unwrap();
        b.add_diffusion("c", "p", "q", 4.0, None).unwrap();
        let store = b.build();
        let (expected, sampled) = support(&store, CascadeId(0), 10.0, 4, 400);
        assert!(expected.len() > 2);
        assert_eq!(sampled, expected);
    }

    #[test]
    fn walks_are_deterministic() {
        let store = forced_path_store();
        let g = build_competition_graph(&store, 10.0, 0.1, SimilarityKind::Jaccard).unwrap();
        let idx = WalkIndex::new(&store);
        let p = WalkParams { seed: 3, ..WalkParams::default() };
        let a = temporal_walks(&store, &idx, &g, CascadeId(0), 10.0, &p).unwrap();
        let b = temporal_walks(&store, &idx, &g, CascadeId(0), 10.0, &p).unwrap();
        assert_eq!(a, b);
    }

    fn random_store(rows: &[(u8, u8, u8, u8)]) -> CascadeStore {
        let mut b = StoreBuilder::new();
        for &(c, s, t, time) in rows {
            if s != t {
                b.add_diffusion(&format!("c{c}"), &format!("p{s}"), &format!("p{t}"), time as f64, None).unwrap();
            }
        }
        b.build()
    }

    proptest! {
        #[test]
        fn walk_invariants(
            rows in prop::collection::vec((0u8..6, 0u8..8, 0u8..8, 0u8..20), 2..80),
            cutoff in 0u8..20,
            seed in 0u64..1000,
        ) {
            let store = random_store(&rows);
            let cutoff = cutoff as f64;
            let g = build_competition_graph(&store, cutoff, 0.1, SimilarityKind::Jaccard).unwrap();
            let idx = WalkIndex::new(&store);
            let params = WalkParams { walks: 3, hops: 4, start: WalkStart::LastTarget, seed };
            for c in store.cascade_ids() {
                let traces = walk_traces(&store, &idx, &g, c, cutoff, &params).unwrap();
                for trace in &traces {
                    prop_assert!(trace.steps.len() <= params.hops);
                    prop_assert!(trace.steps.windows(2).all(|w| w[1].time <= w[0].time));
                    for s in &trace.steps {
                        prop_assert!(s.time <= cutoff);
                        prop_assert!(g.weight(c, s.cascade).map_or(false, |w| w >= 0.1));
                    }
                }
                let cross = temporal_walks(&store, &idx, &g, c, cutoff, &params).unwrap();
                prop_assert!(cross.real_len() <= params.capacity());
                let times: Vec<f64> = cross.real_entries().map(|(_, t)| t).collect();
                prop_assert!(times.windows(2).all(|w| w[0] <= w[1]));
                if let Ok(own) = self_sequence(&store, c, cutoff, 5) {
                    let mixed = mix(&own, &cross, cutoff);
                    let mut got: Vec<(u32, u64)> = mixed.real_entries().map(|(p, t)| (p.0, t.to_bits())).collect();
                    let mut want: Vec<(u32, u64)> = own.real_entries().chain(cross.real_entries()).map(|(p, t)| (p.0, t.to_bits())).collect();
                    got.sort();
                    want.sort();
                    prop_assert_eq!(got, want);
                }
            }
        }
    }

    #[test]
    fn pad_slots_do_not_leak_in_real_entries() {
        let seq = PropagationSequence::from_entries(SequenceKind::Cross, 4, &vec![(PromoterId(3), 1.0)], 2.0);
        assert_eq!(seq.real_entries().collect::<Vec<_>>(), [(PromoterId(3), 1.0)]);
    }
}
