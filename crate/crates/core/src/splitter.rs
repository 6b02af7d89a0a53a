//! Time-ordered and cascade-based construction of prediction tasks.
//!
//! The time-ordered scheme cuts `[b0, b4]` into four equal windows
//! `W1 = [b0, b1]`, `Wk = (b_{k-1}, b_k]`. Input window `k` (k = 1, 2, 3)
//! forms the train, val and test task respectively, labelled by the events
//! falling in window `k + 1`. Every event of the span belongs to exactly one
//! window, and a task only ever observes events at or before its cutoff.

use alloc::string::ToString;
use alloc::vec::Vec;
use core::ops::Range;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::{CascadeId, CascadeStore, EventStream, Interval};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SplitKind {
    Train,
    Val,
    Test,
}

impl SplitKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitKind::Train => "train",
            SplitKind::Val => "val",
            SplitKind::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(SplitKind::Train),
            "val" => Some(SplitKind::Val),
            "test" => Some(SplitKind::Test),
            _ => None,
        }
    }
}

/// How much history a time-ordered task may observe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ObservationScope {
    /// Every event up to the cutoff.
    #[default]
    FullPrefix,
    /// Only the events inside the task's own input window.
    WindowOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SplitMode {
    TimeOrdered { window: f64 },
    CascadeRandom { ratios: SplitRatios, observe: f64, horizon: f64, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl SplitRatios {
    pub fn new(train: f64, val: f64, test: f64) -> Result<Self> {
        let r = SplitRatios { train, val, test };
        r.validate()?;
        Ok(r)
    }

    fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|p| !(0.0..=1.0).contains(p)) || crate::math::abs(parts.iter().sum::<f64>() - 1.0) > 1e-9 {
            return Err(Error::InvalidParameter {
                name: "ratios",
                reason: "fractions must lie in [0, 1] and sum to 1".to_string(),
            });
        }
        Ok(())
    }
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios { train: 0.7, val: 0.15, test: 0.15 }
    }
}

/// Window boundaries `b0..b4` of a time-ordered split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeOrderedPlan {
    pub window: f64,
    pub boundaries: [f64; 5],
}

impl TimeOrderedPlan {
    /// Window `k` in `1..=4`.
    pub fn window_interval(&self, k: usize) -> Interval {
        assert!((1..=4).contains(&k));
        let (lo, hi) = (self.boundaries[k - 1], self.boundaries[k]);
        if k == 1 {
            Interval::closed(lo, hi)
        } else {
            Interval::left_open(lo, hi)
        }
    }
}

/// Dataset-specific window durations, in seconds.
pub mod window_presets {
    pub const TWITTER: f64 = 2.0 * 86_400.0;
    pub const WEIBO: f64 = 3_600.0;
    pub const APS: f64 = 5.0 * 365.0 * 86_400.0;
    pub const TAOKE: f64 = 86_400.0;

    pub fn by_name(name: &str) -> Option<f64> {
        match name.to_ascii_lowercase().as_str() {
            "twitter" => Some(TWITTER),
            "weibo" => Some(WEIBO),
            "aps" => Some(APS),
            "taoke" => Some(TAOKE),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionTask {
    pub cascade: CascadeId,
    pub cutoff: f64,
    /// Exclusive lower bound on observed event times (`None` = full history).
    pub observed_from: Option<f64>,
    /// Range into `store.cascade_events(cascade)` of the observed events.
    pub observed: Range<usize>,
    pub label_window: Interval,
    pub popularity_label: u32,
    pub conversion_label: u32,
    pub split: SplitKind,
}

impl PredictionTask {
    /// The interval whose events the task observes.
    pub fn observation_interval(&self) -> Interval {
        match self.observed_from {
            Some(from) => Interval::left_open(from, self.cutoff),
            None => Interval::closed(f64::NEG_INFINITY, self.cutoff),
        }
    }
}

pub fn plan_time_ordered(store: &CascadeStore, window: f64) -> Result<TimeOrderedPlan> {
    if !(window > 0.0 && window.is_finite()) {
        return Err(Error::InvalidParameter { name: "window_duration", reason: "must be positive".to_string() });
    }
    let (first, last) = store.time_span().ok_or(Error::EmptyStore)?;
    let required = 4.0 * window;
    let span = last - first;
    // tolerate representation error in `b0 + 4w`
    if span + 1e-9 * required.max(1.0) < required {
        return Err(Error::SpanTooShort { span, window, required, deficit: required - span });
    }
    let mut boundaries = [first; 5];
    for (k, b) in boundaries.iter_mut().enumerate() {
        *b = first + k as f64 * window;
    }
    Ok(TimeOrderedPlan { window, boundaries })
}

pub fn make_time_ordered_split(store: &CascadeStore, window: f64) -> Result<Vec<PredictionTask>> {
    make_time_ordered_split_with(store, window, ObservationScope::FullPrefix)
}

pub fn make_time_ordered_split_with(
    store: &CascadeStore,
    window: f64,
    scope: ObservationScope,
) -> Result<Vec<PredictionTask>> {
    let plan = plan_time_ordered(store, window)?;
    let mut tasks = Vec::new();
    for (k, split) in [(1usize, SplitKind::Train), (2, SplitKind::Val), (3, SplitKind::Test)] {
        let input = plan.window_interval(k);
        let label_window = plan.window_interval(k + 1);
        let cutoff = plan.boundaries[k];
        for c in store.cascade_ids() {
            if store.count_in(c, input, EventStream::Diffusion)? == 0 {
                continue;
            }
            let prefix = store.observed_range(c, cutoff)?;
            let (observed_from, observed) = match scope {
                ObservationScope::FullPrefix => (None, prefix),
                ObservationScope::WindowOnly if k == 1 => (None, prefix),
                ObservationScope::WindowOnly => {
                    let lower = store.observed_range(c, plan.boundaries[k - 1])?.end;
                    (Some(plan.boundaries[k - 1]), lower..prefix.end)
                }
            };
            tasks.push(PredictionTask {
                cascade: c,
                cutoff,
                observed_from,
                observed,
                label_window,
                popularity_label: store.count_in(c, label_window, EventStream::Diffusion)?,
                conversion_label: store.count_in(c, label_window, EventStream::Conversion)?,
                split,
            });
        }
    }
    Ok(tasks)
}

/// Legacy split: cascades are shuffled with `seed` and partitioned by
/// `ratios`; each cascade observes `observe` time units from its own first
/// event and is labelled by the following `horizon`.
pub fn make_cascade_random_split(
    store: &CascadeStore,
    ratios: SplitRatios,
    observe: f64,
    horizon: f64,
    seed: u64,
) -> Result<Vec<PredictionTask>> {
    ratios.validate()?;
    let mut cascades: Vec<CascadeId> =
        store.cascade_ids().filter(|&c| !store.cascade_events(c).map_or(true, |e| e.is_empty())).collect();
    if cascades.is_empty() {
        return Err(Error::EmptyStore);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    cascades.shuffle(&mut rng);
    let n = cascades.len();
    let n_train = libm::round(n as f64 * ratios.train) as usize;
    let n_val = (libm::round(n as f64 * ratios.val) as usize).min(n - n_train);
    let assignment: Vec<(CascadeId, SplitKind)> = cascades
        .into_iter()
        .enumerate()
        .map(|(i, c)| {
            let split = if i < n_train {
                SplitKind::Train
            } else if i < n_train + n_val {
                SplitKind::Val
            } else {
                SplitKind::Test
            };
            (c, split)
        })
        .collect();
    make_cascade_split_assigned(store, &assignment, observe, horizon)
}

/// Cascade-based split with an explicit cascade-to-split assignment; tasks
/// are emitted in assignment order.
pub fn make_cascade_split_assigned(
    store: &CascadeStore,
    assignment: &[(CascadeId, SplitKind)],
    observe: f64,
    horizon: f64,
) -> Result<Vec<PredictionTask>> {
    if !(observe >= 0.0 && horizon >= 0.0) {
        return Err(Error::InvalidParameter {
            name: "observe/horizon",
            reason: "must be non-negative".to_string(),
        });
    }
    let mut tasks = Vec::with_capacity(assignment.len());
    for &(c, split) in assignment {
        let events = store.cascade_events(c)?;
        let Some(&first) = events.first() else { continue };
        let start = store.diffusion()[first as usize].time;
        let cutoff = start + observe;
        let label_window = Interval::left_open(cutoff, cutoff + horizon);
        tasks.push(PredictionTask {
            cascade: c,
            cutoff,
            observed_from: None,
            observed: store.observed_range(c, cutoff)?,
            label_window,
            popularity_label: store.count_in(c, label_window, EventStream::Diffusion)?,
            conversion_label: store.count_in(c, label_window, EventStream::Conversion)?,
            split,
        });
    }
    Ok(tasks)
}

/// Linear-scan count of a cascade's events inside `interval`. Independent of
/// the per-cascade index; used to cross-check labels.
pub fn label_oracle(store: &CascadeStore, cascade: CascadeId, interval: Interval, stream: EventStream) -> u32 {
    match stream {
        EventStream::Diffusion => {
            store.diffusion().iter().filter(|e| e.cascade == cascade && interval.contains(e.time)).count() as u32
        }
        EventStream::Conversion => {
            store.conversions().iter().filter(|e| e.cascade == cascade && interval.contains(e.time)).count() as u32
        }
    }
}

/// Tasks of one split, in their original order.
pub fn tasks_of(tasks: &[PredictionTask], split: SplitKind) -> Vec<usize> {
    tasks.iter().enumerate().filter(|(_, t)| t.split == split).map(|(i, _)| i).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::StoreBuilder;
    use alloc::format;
    use alloc::vec;
    use proptest::prelude::*;

    /// Windows of length 1 starting at 0; cascade "a" has events at 0.5, 1.5, 1.7.
    fn example_store() -> CascadeStore {
        let mut b = StoreBuilder::new();
        b.add_diffusion("bg", "x", "y", 0.0, None).unwrap();
        b.add_diffusion("a", "p", "q", 0.5, None).unwrap();
        b.add_diffusion("a", "q", "r", 1.5, None).unwrap();
        b.add_diffusion("a", "r", "s", 1.7, None).unwrap();
        b.add_diffusion("late", "x", "z", 3.5, None).unwrap();
        b.add_diffusion("bg", "y", "z", 4.0, None).unwrap();
        b.build()
    }

    #[test]
    fn worked_window_example() {
        let store = example_store();
        let a = store.cascade_by_name("a").unwrap();
        let tasks = make_time_ordered_split(&store, 1.0).unwrap();
        let of_a: Vec<&PredictionTask> = tasks.iter().filter(|t| t.cascade == a).collect();
        assert_eq!(of_a.len(), 2);
        let train = of_a[0];
        assert_eq!(train.split, SplitKind::Train);
        assert_eq!(train.observed.len(), 1);
        assert_eq!(train.popularity_label, 2);
        let val = of_a[1];
        assert_eq!(val.split, SplitKind::Val);
        assert_eq!(val.observed.len(), 3);
        assert_eq!(val.popularity_label, 0);
    }

    #[test]
    fn cascade_only_in_last_window_has_no_task() {
        let store = example_store();
        let late = store.cascade_by_name("late").unwrap();
        let tasks = make_time_ordered_split(&store, 1.0).unwrap();
        assert!(tasks.iter().all(|t| t.cascade != late));
    }

    #[test]
    fn short_span_names_deficit() {
        let store = example_store();
        match make_time_ordered_split(&store, 1.5) {
            Err(Error::SpanTooShort { deficit, .. }) => assert!((deficit - 2.0).abs() < 1e-12),
            other => panic!("{other:?}"),
        }
        assert!(make_time_ordered_split(&store, 0.0).is_err());
    }

    #[test]
    fn window_only_scope_drops_earlier_history() {
        let store = example_store();
        let a = store.cascade_by_name("a").unwrap();
        let tasks = make_time_ordered_split_with(&store, 1.0, ObservationScope::WindowOnly).unwrap();
        let val = tasks.iter().find(|t| t.cascade == a && t.split == SplitKind::Val).unwrap();
        assert_eq!(val.observed.len(), 2);
        assert_eq!(val.observed_from, Some(1.0));
    }

    #[test]
    fn preset_windows() {
        assert_eq!(window_presets::TWITTER, 172_800.0);
        assert_eq!(window_presets::WEIBO, 3_600.0);
        assert_eq!(window_presets::TAOKE, 86_400.0);
        assert_eq!(window_presets::by_name("APS"), Some(5.0 * 365.0 * 86_400.0));
    }

    fn hundred_cascades() -> CascadeStore {
        let mut b = StoreBuilder::new();
        for c in 0..100 {
            for k in 0..5 {
                b.add_diffusion(&format!("c{c}"), "u0", &format!("u{}", k + 1), (c % 7) as f64 + k as f64 * 0.3, None)
                    .unwrap();
            }
        }
        b.build()
    }

    #[test]
    fn cascade_random_counts_and_determinism() {
        let store = hundred_cascades();
        let ratios = SplitRatios::new(0.7, 0.0, 0.3).unwrap();
        let a = make_cascade_random_split(&store, ratios, 1.0, 2.0, 9).unwrap();
        assert_eq!(a.iter().filter(|t| t.split == SplitKind::Train).count(), 70);
        assert_eq!(a.iter().filter(|t| t.split == SplitKind::Test).count(), 30);
        let b = make_cascade_random_split(&store, ratios, 1.0, 2.0, 9).unwrap();
        assert_eq!(a, b);
        let c = make_cascade_random_split(&store, ratios, 1.0, 2.0, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn cascade_random_rejects_bad_ratios() {
        assert!(SplitRatios::new(0.7, 0.2, 0.2).is_err());
    }

    #[test]
    fn long_horizon_counts_remaining_events() {
        let store = hundred_cascades();
        let tasks = make_cascade_random_split(&store, SplitRatios::default(), 0.35, 1e6, 1).unwrap();
        for t in &tasks {
            let total = store.cascade_events(t.cascade).unwrap().len() as u32;
            let observed = t.observed.len() as u32;
            assert_eq!(t.popularity_label, total - observed);
            let recount = label_oracle(&store, t.cascade, Interval::left_open(t.cutoff, f64::INFINITY), EventStream::Diffusion);
            assert_eq!(t.popularity_label, recount);
        }
    }

    #[test]
    fn oracle_edge_cases() {
        let mut b = StoreBuilder::new();
        for k in 0..7 {
            b.add_diffusion("c", "a", "b", k as f64, None).unwrap();
        }
        let store = b.build();
        let c = CascadeId(0);
        assert_eq!(label_oracle(&store, c, Interval::left_open(2.0, 2.0), EventStream::Diffusion), 0);
        assert_eq!(label_oracle(&store, c, Interval::closed(0.0, 6.0), EventStream::Diffusion), 7);
    }

    fn random_store(rows: &[(u8, u16)], convs: &[(u8, u16)]) -> CascadeStore {
        let mut b = StoreBuilder::new();
        b.add_diffusion("anchor", "s", "t", 0.0, None).unwrap();
        b.add_diffusion("anchor", "t", "s", 100.0, None).unwrap();
        for &(c, t) in rows {
            b.add_diffusion(&format!("c{c}"), "s", &format!("t{c}"), t as f64 / 10.0, None).unwrap();
        }
        for &(c, t) in convs {
            b.add_conversion(&format!("c{c}"), "s", &format!("u{t}"), t as f64 / 10.0).unwrap();
        }
        b.build()
    }

    proptest! {
        #[test]
        fn labels_match_oracle_and_never_leak(
            rows in prop::collection::vec((0u8..8, 0u16..1000), 1..120),
            convs in prop::collection::vec((0u8..8, 0u16..1000), 0..60),
            quarter in prop::sample::select(vec![5.0, 12.5, 25.0]),
        ) {
            let store = random_store(&rows, &convs);
            let plan = plan_time_ordered(&store, quarter).unwrap();
            let tasks = make_time_ordered_split(&store, quarter).unwrap();
            for t in &tasks {
                let events = store.cascade_events(t.cascade).unwrap();
                let observed = &events[t.observed.clone()];
                prop_assert!(!observed.is_empty());
                for &e in observed {
                    prop_assert!(store.diffusion()[e as usize].time <= t.cutoff);
                    prop_assert!(!t.label_window.contains(store.diffusion()[e as usize].time));
                }
                prop_assert!(t.cutoff <= t.label_window.start);
                prop_assert_eq!(t.popularity_label, label_oracle(&store, t.cascade, t.label_window, EventStream::Diffusion));
                prop_assert_eq!(t.conversion_label, label_oracle(&store, t.cascade, t.label_window, EventStream::Conversion));
            }
            for k in 0..4 {
                let len = plan.boundaries[k + 1] - plan.boundaries[k];
                prop_assert!((len - quarter).abs() <= 1e-9 * quarter);
            }
        }
    }
}
