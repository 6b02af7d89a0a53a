//! Inter-cascade competition graph over promoter overlap.
//!
//! Pairs are only scored when they share at least one promoter, found through
//! a per-promoter inverted index; every other pair has similarity 0 and can
//! never reach a positive threshold.

use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::store::{CascadeId, CascadeStore, PromoterId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum SimilarityKind {
    #[default]
    Jaccard,
    Cosine,
}

impl SimilarityKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SimilarityKind::Jaccard => "jaccard",
            SimilarityKind::Cosine => "cosine",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "jaccard" => Some(SimilarityKind::Jaccard),
            "cosine" => Some(SimilarityKind::Cosine),
            _ => None,
        }
    }
}

/// Which endpoints of a diffusion event count as participating promoters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum PromoterScope {
    #[default]
    SourceAndTarget,
    TargetOnly,
}

pub const DEFAULT_TAU1: f64 = 0.1;

/// Sorted, deduplicated promoter ids.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PromoterSet(Vec<PromoterId>);

impl PromoterSet {
    pub fn from_unsorted(mut ids: Vec<PromoterId>) -> Self {
        ids.sort_unstable();
        ids.dedup();
        PromoterSet(ids)
    }

    pub fn as_slice(&self) -> &[PromoterId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, p: PromoterId) -> bool {
        self.0.binary_search(&p).is_ok()
    }
}

/// Promoters of `cascade` active in diffusion events with `time <= cutoff`.
pub fn promoter_set(store: &CascadeStore, cascade: CascadeId, cutoff: f64, scope: PromoterScope) -> Result<PromoterSet> {
    let events = store.cascade_events(cascade)?;
    let range = store.observed_range(cascade, cutoff)?;
    let mut ids = Vec::with_capacity(range.len() * 2);
    for &e in &events[range] {
        let ev = &store.diffusion()[e as usize];
        if scope == PromoterScope::SourceAndTarget {
            ids.push(ev.src);
        }
        ids.push(ev.tgt);
    }
    Ok(PromoterSet::from_unsorted(ids))
}

/// `|A ∩ B| / |A ∪ B|`, and 0 when both sets are empty.
pub fn jaccard(a: &PromoterSet, b: &PromoterSet) -> f64 {
    let inter = intersection_size(a.as_slice(), b.as_slice());
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

fn intersection_size(a: &[PromoterId], b: &[PromoterId]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            core::cmp::Ordering::Less => i += 1,
            core::cmp::Ordering::Greater => j += 1,
            core::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

/// Cosine similarity; 0 if either vector has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum();
    let nb: f64 = b.iter().map(|x| x * x).sum();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (math::sqrt(na) * math::sqrt(nb))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub i: CascadeId,
    pub j: CascadeId,
    pub weight: f64,
}

/// Weighted, undirected cascade graph stored as a symmetric CSR adjacency.
/// Every cascade of the store is a node; neighbour lists are sorted by id.
#[derive(Debug, Clone, PartialEq)]
pub struct CompetitionGraph {
    tau1: f64,
    kind: SimilarityKind,
    offsets: Vec<usize>,
    neighbors: Vec<CascadeId>,
    weights: Vec<f64>,
}

impl CompetitionGraph {
    /// Builds the adjacency from an edge list with `i < j`.
    pub fn from_edges(num_cascades: usize, tau1: f64, kind: SimilarityKind, edges: &[Edge]) -> Result<Self> {
        let mut degree = vec![0usize; num_cascades];
        for e in edges {
            if e.i == e.j {
                return Err(Error::InvalidParameter { name: "edges", reason: "self-edge".to_string() });
            }
            if e.i.index() >= num_cascades || e.j.index() >= num_cascades {
                return Err(Error::UnknownCascade(e.i.0.max(e.j.0)));
            }
            degree[e.i.index()] += 1;
            degree[e.j.index()] += 1;
        }
        let mut offsets = vec![0usize; num_cascades + 1];
        for c in 0..num_cascades {
            offsets[c + 1] = offsets[c] + degree[c];
        }
        let mut fill = offsets.clone();
        let mut neighbors = vec![CascadeId(0); offsets[num_cascades]];
        let mut weights = vec![0.0; offsets[num_cascades]];
        for e in edges {
            for (a, b) in [(e.i, e.j), (e.j, e.i)] {
                let slot = fill[a.index()];
                neighbors[slot] = b;
                weights[slot] = e.weight;
                fill[a.index()] += 1;
            }
        }
        for c in 0..num_cascades {
            let (lo, hi) = (offsets[c], offsets[c + 1]);
            let mut row: Vec<(CascadeId, f64)> =
                neighbors[lo..hi].iter().copied().zip(weights[lo..hi].iter().copied()).collect();
            row.sort_by_key(|&(n, _)| n);
            for (k, (n, w)) in row.into_iter().enumerate() {
                neighbors[lo + k] = n;
                weights[lo + k] = w;
            }
        }
        Ok(CompetitionGraph { tau1, kind, offsets, neighbors, weights })
    }

    pub fn tau1(&self) -> f64 {
        self.tau1
    }

    pub fn similarity_kind(&self) -> SimilarityKind {
        self.kind
    }

    pub fn num_cascades(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn num_edges(&self) -> usize {
        self.neighbors.len() / 2
    }

    fn check(&self, c: CascadeId) -> Result<()> {
        if c.index() < self.num_cascades() {
            Ok(())
        } else {
            Err(Error::UnknownCascade(c.0))
        }
    }

    pub fn neighbor_ids(&self, c: CascadeId) -> Result<&[CascadeId]> {
        self.check(c)?;
        Ok(&self.neighbors[self.offsets[c.index()]..self.offsets[c.index() + 1]])
    }

    pub fn neighbor_weights(&self, c: CascadeId) -> Result<&[f64]> {
        self.check(c)?;
        Ok(&self.weights[self.offsets[c.index()]..self.offsets[c.index() + 1]])
    }

    /// `(neighbour, weight)` pairs of `c`, sorted by neighbour id.
    pub fn neighbors(&self, c: CascadeId) -> Result<Vec<(CascadeId, f64)>> {
        Ok(self.neighbor_ids(c)?.iter().copied().zip(self.neighbor_weights(c)?.iter().copied()).collect())
    }

    pub fn weight(&self, a: CascadeId, b: CascadeId) -> Option<f64> {
        let ids = self.neighbor_ids(a).ok()?;
        let k = ids.binary_search(&b).ok()?;
        Some(self.weights[self.offsets[a.index()] + k])
    }

    pub fn is_neighbor(&self, a: CascadeId, b: CascadeId) -> bool {
        self.neighbor_ids(a).is_ok_and(|ids| ids.binary_search(&b).is_ok())
    }

    /// Each undirected edge once, with `i < j`, in `(i, j)` order.
    pub fn edges(&self) -> Vec<Edge> {
        let mut out = Vec::with_capacity(self.num_edges());
        for i in 0..self.num_cascades() {
            let i = CascadeId(i as u32);
            for (j, w) in self.neighbors(i).unwrap_or_default() {
                if i < j {
                    out.push(Edge { i, j, weight: w });
                }
            }
        }
        out
    }
}

/// Builds the graph of all cascade pairs with similarity `>= tau1`, using
/// only events at or before `cutoff` for promoter sets.
pub fn build_competition_graph(
    store: &CascadeStore,
    cutoff: f64,
    tau1: f64,
    kind: SimilarityKind,
) -> Result<CompetitionGraph> {
    build_competition_graph_with(store, cutoff, tau1, kind, PromoterScope::default())
}

pub fn build_competition_graph_with(
    store: &CascadeStore,
    cutoff: f64,
    tau1: f64,
    kind: SimilarityKind,
    scope: PromoterScope,
) -> Result<CompetitionGraph> {
    if !(tau1 > 0.0 && tau1 <= 1.0) {
        return Err(Error::InvalidParameter { name: "tau1", reason: "must lie in (0, 1]".to_string() });
    }
    let n = store.num_cascades();
    let edges = match kind {
        SimilarityKind::Jaccard => jaccard_edges(store, cutoff, tau1, scope)?,
        SimilarityKind::Cosine => cosine_edges(store, tau1)?,
    };
    CompetitionGraph::from_edges(n, tau1, kind, &edges)
}

fn jaccard_edges(store: &CascadeStore, cutoff: f64, tau1: f64, scope: PromoterScope) -> Result<Vec<Edge>> {
    let n = store.num_cascades();
    let sets: Vec<PromoterSet> =
        store.cascade_ids().map(|c| promoter_set(store, c, cutoff, scope)).collect::<Result<_>>()?;

    // inverted index: promoter -> cascades containing it, ascending
    let mut postings: Vec<Vec<u32>> = vec![Vec::new(); store.promoter_slots()];
    for (c, set) in sets.iter().enumerate() {
        for p in set.as_slice() {
            postings[p.index()].push(c as u32);
        }
    }

    let mut shared = vec![0u32; n];
    let mut touched: Vec<u32> = Vec::new();
    let mut edges = Vec::new();
    for (i, set) in sets.iter().enumerate() {
        for p in set.as_slice() {
            let list = &postings[p.index()];
            let start = list.partition_point(|&c| c as usize <= i);
            for &j in &list[start..] {
                if shared[j as usize] == 0 {
                    touched.push(j);
                }
                shared[j as usize] += 1;
            }
        }
        touched.sort_unstable();
        for &j in &touched {
            let inter = shared[j as usize] as usize;
            shared[j as usize] = 0;
            let union = set.len() + sets[j as usize].len() - inter;
            let w = inter as f64 / union as f64;
            if w >= tau1 {
                edges.push(Edge { i: CascadeId(i as u32), j: CascadeId(j), weight: w });
            }
        }
        touched.clear();
    }
    Ok(edges)
}

fn cosine_edges(store: &CascadeStore, tau1: f64) -> Result<Vec<Edge>> {
    let table = store.cascade_features();
    if table.is_empty() {
        return Err(Error::MissingCascadeFeatures);
    }
    let n = store.num_cascades();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let w = cosine(table.get(i), table.get(j));
            if w >= tau1 {
                edges.push(Edge { i: CascadeId(i as u32), j: CascadeId(j as u32), weight: w.min(1.0) });
            }
        }
    }
    Ok(edges)
}
