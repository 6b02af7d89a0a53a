//! Domain types for diffusion and conversion logs and the indexed event store.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense promoter index. Index 0 is reserved as the sequence pad sentinel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PromoterId(pub u32);

impl PromoterId {
    pub const PAD: PromoterId = PromoterId(0);

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CascadeId(pub u32);

impl CascadeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct UserId(pub u32);

/// One propagation step of a cascade from `src` to `tgt`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionEvent {
    pub src: PromoterId,
    pub tgt: PromoterId,
    pub cascade: CascadeId,
    pub time: f64,
    /// Stored for completeness; the model does not consume edge features.
    pub edge_features: Option<Vec<f64>>,
}

/// A downstream action (like, purchase, ...) triggered through a promoter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConversionEvent {
    pub promoter: PromoterId,
    pub user: UserId,
    pub cascade: CascadeId,
    pub time: f64,
}

/// Interns arbitrary string ids to dense integers in first-seen order.
#[derive(Debug, Clone, Default)]
pub struct Interner {
    names: Vec<String>,
    lookup: BTreeMap<String, u32>,
}

impl Interner {
    pub fn intern(&mut self, name: &str) -> u32 {
        if let Some(&id) = self.lookup.get(name) {
            return id;
        }
        let id = self.names.len() as u32;
        self.names.push(name.to_string());
        self.lookup.insert(name.to_string(), id);
        id
    }

    pub fn get(&self, name: &str) -> Option<u32> {
        self.lookup.get(name).copied()
    }

    pub fn name(&self, id: u32) -> &str {
        &self.names[id as usize]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

/// Per-id feature vectors. Lookups of missing ids resolve to zeros.
#[derive(Debug, Clone, Default)]
pub struct FeatureTable {
    dim: usize,
    rows: Vec<Option<Vec<f64>>>,
    zeros: Vec<f64>,
}

impl FeatureTable {
    /// Builds a table from `(dense id, vector)` pairs. The shared length is
    /// taken from the first vector; entries of a different length are kept
    /// for [`validate_store`] to report but read back as zeros.
    pub fn from_entries(len: usize, entries: Vec<(u32, Vec<f64>)>) -> Self {
        let dim = entries.first().map_or(0, |(_, v)| v.len());
        let mut rows = vec![None; len];
        for (id, values) in entries {
            let id = id as usize;
            if id >= rows.len() {
                rows.resize(id + 1, None);
            }
            rows[id] = Some(values);
        }
        FeatureTable { dim, rows, zeros: vec![0.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.dim == 0
    }

    pub fn get(&self, id: usize) -> &[f64] {
        match self.rows.get(id) {
            Some(Some(v)) if v.len() == self.dim => v,
            _ => &self.zeros,
        }
    }

    pub fn raw(&self, id: usize) -> Option<&[f64]> {
        self.rows.get(id).and_then(|r| r.as_deref())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    fn ensure_len(&mut self, len: usize) {
        if self.rows.len() < len {
            self.rows.resize(len, None);
        }
    }
}

/// Which event stream a count refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventStream {
    Diffusion,
    Conversion,
}

/// A time interval with configurable endpoint inclusion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub start: f64,
    pub end: f64,
    pub start_inclusive: bool,
    pub end_inclusive: bool,
}

impl Interval {
    /// `(start, end]`
    pub fn left_open(start: f64, end: f64) -> Self {
        Interval { start, end, start_inclusive: false, end_inclusive: true }
    }

    /// `[start, end]`
    pub fn closed(start: f64, end: f64) -> Self {
        Interval { start, end, start_inclusive: true, end_inclusive: true }
    }

    pub fn contains(&self, t: f64) -> bool {
        let lower = if self.start_inclusive { t >= self.start } else { t > self.start };
        let upper = if self.end_inclusive { t <= self.end } else { t < self.end };
        lower && upper
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreSummary {
    pub diffusion_events: usize,
    pub conversion_events: usize,
    pub cascades: usize,
    pub promoters: usize,
}

/// Immutable, indexed collection of both event streams and their features.
#[derive(Debug, Clone)]
pub struct CascadeStore {
    diffusion: Vec<DiffusionEvent>,
    conversions: Vec<ConversionEvent>,
    cascade_diffusion: Vec<Vec<u32>>,
    cascade_conversions: Vec<Vec<u32>>,
    promoter_features: FeatureTable,
    cascade_features: FeatureTable,
    promoters: Interner,
    cascades: Interner,
    users: Interner,
}

impl CascadeStore {
    pub fn diffusion(&self) -> &[DiffusionEvent] {
        &self.diffusion
    }

    pub fn conversions(&self) -> &[ConversionEvent] {
        &self.conversions
    }

    pub fn num_cascades(&self) -> usize {
        self.cascades.len()
    }

    /// Number of real promoters (the pad slot is not counted).
    pub fn num_promoters(&self) -> usize {
        self.promoters.len() - 1
    }

    /// Size of the promoter id space including the pad slot.
    pub fn promoter_slots(&self) -> usize {
        self.promoters.len()
    }

    pub fn cascade_ids(&self) -> impl Iterator<Item = CascadeId> {
        (0..self.cascades.len() as u32).map(CascadeId)
    }

    pub fn cascade_name(&self, c: CascadeId) -> &str {
        self.cascades.name(c.0)
    }

    pub fn cascade_by_name(&self, name: &str) -> Option<CascadeId> {
        self.cascades.get(name).map(CascadeId)
    }

    pub fn promoter_name(&self, p: PromoterId) -> &str {
        self.promoters.name(p.0)
    }

    pub fn promoter_by_name(&self, name: &str) -> Option<PromoterId> {
        self.promoters.get(name).filter(|&id| id != 0).map(PromoterId)
    }

    pub fn user_name(&self, u: UserId) -> &str {
        self.users.name(u.0)
    }

    pub fn promoter_features(&self) -> &FeatureTable {
        &self.promoter_features
    }

    pub fn cascade_features(&self) -> &FeatureTable {
        &self.cascade_features
    }

    fn check(&self, c: CascadeId) -> Result<()> {
        if c.index() < self.cascades.len() {
            Ok(())
        } else {
            Err(Error::UnknownCascade(c.0))
        }
    }

    /// Indices into [`Self::diffusion`] of the cascade's events, chronological.
    pub fn cascade_events(&self, c: CascadeId) -> Result<&[u32]> {
        self.check(c)?;
        Ok(&self.cascade_diffusion[c.index()])
    }

    /// Indices into [`Self::conversions`] of the cascade's conversions.
    pub fn cascade_conversions(&self, c: CascadeId) -> Result<&[u32]> {
        self.check(c)?;
        Ok(&self.cascade_conversions[c.index()])
    }

    /// Range (into [`Self::cascade_events`]) of events with `time <= cutoff`.
    pub fn observed_range(&self, c: CascadeId, cutoff: f64) -> Result<Range<usize>> {
        let events = self.cascade_events(c)?;
        let end = events.partition_point(|&e| self.diffusion[e as usize].time <= cutoff);
        Ok(0..end)
    }

    /// Events of `stream` for cascade `c` lying inside `interval`, counted
    /// through the per-cascade index with binary searches.
    pub fn count_in(&self, c: CascadeId, interval: Interval, stream: EventStream) -> Result<u32> {
        self.check(c)?;
        let n = match stream {
            EventStream::Diffusion => count_sorted(&self.cascade_diffusion[c.index()], interval, |e| {
                self.diffusion[e as usize].time
            }),
            EventStream::Conversion => count_sorted(&self.cascade_conversions[c.index()], interval, |e| {
                self.conversions[e as usize].time
            }),
        };
        Ok(n as u32)
    }

    /// First and last diffusion timestamps.
    pub fn time_span(&self) -> Option<(f64, f64)> {
        Some((self.diffusion.first()?.time, self.diffusion.last()?.time))
    }

    pub fn summary(&self) -> StoreSummary {
        StoreSummary {
            diffusion_events: self.diffusion.len(),
            conversion_events: self.conversions.len(),
            cascades: self.cascades.len(),
            promoters: self.num_promoters(),
        }
    }
}

fn count_sorted(events: &[u32], iv: Interval, time: impl Fn(u32) -> f64) -> usize {
    let lower = events.partition_point(|&e| {
        let t = time(e);
        if iv.start_inclusive { t < iv.start } else { t <= iv.start }
    });
    let upper = events.partition_point(|&e| {
        let t = time(e);
        if iv.end_inclusive { t <= iv.end } else { t < iv.end }
    });
    upper.saturating_sub(lower)
}

/// Accumulates events in arbitrary order and produces a sorted, indexed store.
#[derive(Debug, Clone)]
pub struct StoreBuilder {
    allow_self_loops: bool,
    promoters: Interner,
    cascades: Interner,
    users: Interner,
    diffusion: Vec<DiffusionEvent>,
    conversions: Vec<ConversionEvent>,
    promoter_features: Vec<(u32, Vec<f64>)>,
    cascade_features: Vec<(u32, Vec<f64>)>,
}

impl Default for StoreBuilder {
    fn default() -> Self {
        Self::new()
    }
}

impl StoreBuilder {
    pub fn new() -> Self {
        let mut promoters = Interner::default();
        promoters.intern("\u{0}pad");
        StoreBuilder {
            allow_self_loops: false,
            promoters,
            cascades: Interner::default(),
            users: Interner::default(),
            diffusion: Vec::new(),
            conversions: Vec::new(),
            promoter_features: Vec::new(),
            cascade_features: Vec::new(),
        }
    }

    pub fn allow_self_loops(mut self, allow: bool) -> Self {
        self.allow_self_loops = allow;
        self
    }

    pub fn intern_cascade(&mut self, name: &str) -> CascadeId {
        CascadeId(self.cascades.intern(name))
    }

    pub fn intern_promoter(&mut self, name: &str) -> PromoterId {
        PromoterId(self.promoters.intern(name))
    }

    pub fn intern_user(&mut self, name: &str) -> UserId {
        UserId(self.users.intern(name))
    }

    pub fn add_diffusion(
        &mut self,
        cascade: &str,
        src: &str,
        tgt: &str,
        time: f64,
        edge_features: Option<Vec<f64>>,
    ) -> Result<()> {
        let cascade = self.intern_cascade(cascade);
        let src = self.intern_promoter(src);
        let tgt = self.intern_promoter(tgt);
        self.push_diffusion(DiffusionEvent { src, tgt, cascade, time, edge_features })
    }

    /// Adds an event whose ids were already interned through this builder.
    pub fn push_diffusion(&mut self, event: DiffusionEvent) -> Result<()> {
        if !event.time.is_finite() {
            return Err(Error::NonFiniteTime { what: "diffusion event" });
        }
        if event.src == event.tgt && !self.allow_self_loops {
            return Err(Error::SelfLoop {
                index: self.diffusion.len(),
                promoter: self.promoters.name(event.src.0).to_string(),
            });
        }
        self.diffusion.push(event);
        Ok(())
    }

    pub fn add_conversion(&mut self, cascade: &str, promoter: &str, user: &str, time: f64) -> Result<()> {
        let cascade = self.intern_cascade(cascade);
        let promoter = self.intern_promoter(promoter);
        let user = self.intern_user(user);
        self.push_conversion(ConversionEvent { promoter, user, cascade, time })
    }

    pub fn push_conversion(&mut self, event: ConversionEvent) -> Result<()> {
        if !event.time.is_finite() {
            return Err(Error::NonFiniteTime { what: "conversion event" });
        }
        self.conversions.push(event);
        Ok(())
    }

    pub fn add_promoter_features(&mut self, promoter: &str, values: Vec<f64>) {
        let id = self.promoters.intern(promoter);
        self.promoter_features.push((id, values));
    }

    pub fn add_cascade_features(&mut self, cascade: &str, values: Vec<f64>) {
        let id = self.cascades.intern(cascade);
        self.cascade_features.push((id, values));
    }

    pub fn build(self) -> CascadeStore {
        let mut diffusion = self.diffusion;
        let mut conversions = self.conversions;
        // `sort_by` is stable: ties keep insertion (file) order.
        diffusion.sort_by(|a, b| a.time.total_cmp(&b.time));
        conversions.sort_by(|a, b| a.time.total_cmp(&b.time));

        let n_cascades = self.cascades.len();
        let mut cascade_diffusion = vec![Vec::new(); n_cascades];
        for (i, e) in diffusion.iter().enumerate() {
            cascade_diffusion[e.cascade.index()].push(i as u32);
        }
        let mut cascade_conversions = vec![Vec::new(); n_cascades];
        for (i, e) in conversions.iter().enumerate() {
            cascade_conversions[e.cascade.index()].push(i as u32);
        }
        let mut promoter_features = FeatureTable::from_entries(self.promoters.len(), self.promoter_features);
        promoter_features.ensure_len(self.promoters.len());
        let mut cascade_features = FeatureTable::from_entries(n_cascades, self.cascade_features);
        cascade_features.ensure_len(n_cascades);

        CascadeStore {
            diffusion,
            conversions,
            cascade_diffusion,
            cascade_conversions,
            promoter_features,
            cascade_features,
            promoters: self.promoters,
            cascades: self.cascades,
            users: self.users,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureKind {
    Promoter,
    Cascade,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureLengthMismatch {
    pub table: FeatureKind,
    pub id: u32,
    pub len: usize,
    pub expected: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NegativeTimestamp {
    pub stream: EventStream,
    pub index: usize,
    pub time: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub empty_cascades: Vec<CascadeId>,
    pub feature_mismatches: Vec<FeatureLengthMismatch>,
    pub negative_timestamps: Vec<NegativeTimestamp>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations() == 0
    }

    pub fn violations(&self) -> usize {
        self.empty_cascades.len() + self.feature_mismatches.len() + self.negative_timestamps.len()
    }
}

/// Lists cascades without diffusion events, feature vectors whose length
/// disagrees with their table, and negative timestamps. Never fails.
pub fn validate_store(store: &CascadeStore) -> ValidationReport {
    let mut report = ValidationReport::default();
    for c in store.cascade_ids() {
        if store.cascade_diffusion[c.index()].is_empty() {
            report.empty_cascades.push(c);
        }
    }
    for (kind, table) in [
        (FeatureKind::Promoter, &store.promoter_features),
        (FeatureKind::Cascade, &store.cascade_features),
    ] {
        for id in 0..table.len() {
            if let Some(v) = table.raw(id) {
                if v.len() != table.dim() {
                    report.feature_mismatches.push(FeatureLengthMismatch {
                        table: kind,
                        id: id as u32,
                        len: v.len(),
                        expected: table.dim(),
                    });
                }
            }
        }
    }
    for (index, e) in store.diffusion.iter().enumerate() {
        if e.time < 0.0 {
            report.negative_timestamps.push(NegativeTimestamp { stream: EventStream::Diffusion, index, time: e.time });
        }
    }
    for (index, e) in store.conversions.iter().enumerate() {
        if e.time < 0.0 {
            report.negative_timestamps.push(NegativeTimestamp { stream: EventStream::Conversion, index, time: e.time });
        }
    }
    report
}
