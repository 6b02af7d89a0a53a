//! Synthetic stores with planted structure, for benchmarks and learning tests.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::store::{CascadeStore, StoreBuilder};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomStoreConfig {
    pub cascades: usize,
    pub events: usize,
    pub communities: usize,
    pub community_size: usize,
    /// Probability that a participant comes from the cascade's own community.
    pub locality: f64,
    /// Events fall in `[0, span]`.
    pub span: f64,
    pub seed: u64,
}

impl Default for RandomStoreConfig {
    fn default() -> Self {
        RandomStoreConfig { cascades: 10_000, events: 500_000, communities: 200, community_size: 250, locality: 0.9, span: 4.0, seed: 0 }
    }
}

/// Community-structured random store: each cascade draws most promoters from
/// one community, so same-community cascades compete.
pub fn random_store(cfg: &RandomStoreConfig) -> Result<CascadeStore> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut b = StoreBuilder::new();
    if cfg.cascades == 0 {
        return Ok(b.build());
    }
    let pool = cfg.communities.max(1) * cfg.community_size.max(2);
    let per = cfg.events / cfg.cascades;
    let extra = cfg.events % cfg.cascades;
    let names: Vec<String> = (0..pool).map(|p| format!("p{p}")).collect();
    for c in 0..cfg.cascades {
        let name = format!("c{c}");
        let community = rng.random_range(0..cfg.communities.max(1));
        let start = rng.random_range(0.0..cfg.span * 0.5);
        let len = rng.random_range(cfg.span * 0.1..cfg.span * 0.5);
        let n = per + usize::from(c < extra);
        let mut times: Vec<f64> = (0..n).map(|_| start + rng.random_range(0.0..len)).collect();
        // first event inside the first quarter makes every cascade eligible for some split
        if let Some(t) = times.first_mut() {
            *t = rng.random_range(0.0..cfg.span * 0.25);
        }
        times.sort_by(f64::total_cmp);
        let draw = |rng: &mut ChaCha8Rng| {
            if rng.random_bool(cfg.locality) {
                community * cfg.community_size + rng.random_range(0..cfg.community_size)
            } else {
                rng.random_range(0..pool)
            }
        };
        for t in times {
            let s = draw(&mut rng);
            let mut d = draw(&mut rng);
            while d == s {
                d = draw(&mut rng);
            }
            b.add_diffusion(&name, &names[s], &names[d], t, None)?;
        }
    }
    Ok(b.build())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantedConfig {
    pub cascades: usize,
    /// Observed-window sizes are log-uniform in `[1, max_observed]`.
    pub max_observed: usize,
    /// Label multiplier on the observed-prefix size.
    pub growth: f64,
    /// Integer noise drawn uniformly from `-noise..=noise`.
    pub noise: i64,
    /// Conversions per diffusion event (0 = none).
    pub conversions_per_event: usize,
    /// Distinct start offsets; cascade `c` starts at `(c % starts) * start_step`.
    pub starts: usize,
    pub start_step: f64,
    pub pool: usize,
    pub seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        PlantedConfig {
            cascades: 400,
            max_observed: 60,
            growth: 3.0,
            noise: 1,
            conversions_per_event: 0,
            starts: 4,
            start_step: 0.25,
            pool: 400,
            seed: 0,
        }
    }
}

/// Planted growth: each cascade has `n` events in `[s, s + 1]` and
/// `round(growth * n) + noise` events in `(s + 1, s + 2]`, so a cascade-random
/// split with `observe = horizon = 1` labels every task with that count.
/// With `conversions_per_event = k`, every diffusion event comes with `k`
/// conversions at the same instant.
pub fn planted_growth_store(cfg: &PlantedConfig) -> Result<CascadeStore> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut b = StoreBuilder::new();
    let ln_max = libm::log((cfg.max_observed.max(1)) as f64);
    let mut user = 0u64;
    for c in 0..cfg.cascades {
        let name = format!("c{c:04}");
        let s = (c % cfg.starts.max(1)) as f64 * cfg.start_step;
        let n = libm::round(libm::exp(rng.random_range(0.0..=ln_max))).max(1.0) as usize;
        let noise = if cfg.noise > 0 { rng.random_range(-cfg.noise..=cfg.noise) } else { 0 };
        let future = (libm::round(cfg.growth * n as f64) as i64 + noise).max(0) as usize;
        let mut times: Vec<f64> = Vec::with_capacity(n + future);
        times.push(s);
        for _ in 1..n {
            times.push(s + rng.random_range(0.0..=1.0));
        }
        for _ in 0..future {
            let u: f64 = rng.random_range(0.0..1.0);
            times.push(s + 2.0 - u);
        }
        times.sort_by(f64::total_cmp);
        let home = rng.random_range(0..cfg.pool.max(2));
        for t in times {
            let src = (home + rng.random_range(0..20)) % cfg.pool.max(2);
            let mut dst = (home + rng.random_range(0..40)) % cfg.pool.max(2);
            if dst == src {
                dst = (dst + 1) % cfg.pool.max(2);
            }
            let (sn, dn) = (format!("p{src}"), format!("p{dst}"));
            b.add_diffusion(&name, &sn, &dn, t, None)?;
            for _ in 0..cfg.conversions_per_event {
                b.add_conversion(&name, &dn, &format!("user{user}"), t)?;
                user += 1;
            }
        }
    }
    Ok(b.build())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecencyConfig {
    pub cascades: usize,
    pub window: f64,
    pub seed: u64,
}

impl Default for RecencyConfig {
    fn default() -> Self {
        RecencyConfig { cascades: 120, window: 10.0, seed: 0 }
    }
}

/// Store whose labels depend only on the age of each cascade's latest event:
/// in every window, a cascade whose last event lies `gap` before the window
/// end gets `round(30 * exp(-gap / 2))` events in the next window, all placed
/// right after the boundary except the final one, whose position sets the next
/// gap. Every cascade carries two uniform static attributes.
pub fn recency_store(cfg: &RecencyConfig) -> Result<CascadeStore> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut b = StoreBuilder::new();
    let w = cfg.window;
    b.add_diffusion("anchor", "a0", "a1", 0.0, None)?;
    b.add_diffusion("anchor", "a1", "a2", 4.0 * w, None)?;
    b.add_cascade_features("anchor", alloc::vec![0.5, 0.5]);
    for c in 0..cfg.cascades {
        let name = format!("r{c:03}");
        let home = rng.random_range(0..200usize);
        let attrs = alloc::vec![rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)];
        b.add_cascade_features(&name, attrs);
        let emit = |b: &mut StoreBuilder, rng: &mut ChaCha8Rng, t: f64| -> Result<()> {
            let s = format!("q{}", (home + rng.random_range(0..15)) % 200);
            let mut d = format!("q{}", (home + rng.random_range(0..15)) % 200);
            if d == s {
                d.push('x');
            }
            b.add_diffusion(&name, &s, &d, t, None)
        };
        let mut gap = rng.random_range(0.0..w * 0.9);
        let first = rng.random_range(0.0..0.05 * w);
        emit(&mut b, &mut rng, first)?;
        emit(&mut b, &mut rng, w - gap)?;
        for window in 1..4 {
            let start = window as f64 * w;
            let count = libm::round(30.0 * libm::exp(-gap / 2.0)) as usize;
            let next_gap = rng.random_range(0.0..w * 0.9);
            for _ in 1..count {
                let t = start + rng.random_range(0.0..0.05 * w);
                emit(&mut b, &mut rng, t)?;
            }
            emit(&mut b, &mut rng, start + w - next_gap)?;
            gap = next_gap;
        }
    }
    Ok(b.build())
}

/// Three overlapping cascades over six promoters, with promoter and cascade
/// attributes and conversions: small enough for exhaustive gradient checks,
/// rich enough to exercise every parameter group.
pub fn three_cascade_store() -> Result<CascadeStore> {
    let mut b = StoreBuilder::new();
    let rows: [(&str, &str, &str, f64); 18] = [
        ("a", "p0", "p1", 0.0),
        ("a", "p1", "p2", 0.4),
        ("a", "p0", "p3", 0.9),
        ("a", "p2", "p4", 1.3),
        ("a", "p3", "p1", 1.8),
        ("a", "p4", "p5", 2.6),
        ("b", "p1", "p2", 0.2),
        ("b", "p2", "p3", 0.7),
        ("b", "p3", "p0", 1.1),
        ("b", "p0", "p5", 1.6),
        ("b", "p5", "p2", 3.1),
        ("b", "p2", "p4", 3.5),
        ("c", "p4", "p5", 0.1),
        ("c", "p5", "p0", 0.5),
        ("c", "p0", "p2", 1.2),
        ("c", "p2", "p1", 1.7),
        ("c", "p1", "p3", 2.9),
        ("c", "p3", "p4", 3.8),
    ];
    for (c, s, t, time) in rows {
        b.add_diffusion(c, s, t, time, None)?;
    }
    for (k, (c, p, time)) in [("a", "p1", 0.5), ("a", "p2", 1.5), ("b", "p3", 1.2), ("c", "p0", 0.6), ("c", "p2", 3.0), ("b", "p4", 3.6)]
        .into_iter()
        .enumerate()
    {
        b.add_conversion(c, p, &format!("u{k}"), time)?;
    }
    for p in 0..6 {
        let x = p as f64;
        b.add_promoter_features(&format!("p{p}"), alloc::vec![0.3 * x - 0.5, libm::sin(x), 0.1 * x * x]);
    }
    for (k, c) in ["a", "b", "c"].into_iter().enumerate() {
        let x = k as f64;
        b.add_cascade_features(c, alloc::vec![1.0 + x, 0.5 - x]);
    }
    Ok(b.build())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::splitter::{make_cascade_random_split, SplitRatios};

    #[test]
    fn random_store_counts() {
        let cfg = RandomStoreConfig { cascades: 50, events: 1234, seed: 3, ..RandomStoreConfig::default() };
        let s = random_store(&cfg).unwrap();
        assert_eq!(s.num_cascades(), 50);
        assert_eq!(s.diffusion().len(), 1234);
        assert!(s.diffusion().windows(2).all(|w| w[0].time <= w[1].time));
        let empty = random_store(&RandomStoreConfig { cascades: 0, ..cfg }).unwrap();
        assert_eq!(empty.num_cascades(), 0);
    }

    #[test]
    fn planted_labels_follow_the_growth_rule() {
        let cfg = PlantedConfig { cascades: 60, conversions_per_event: 2, ..PlantedConfig::default() };
        let s = planted_growth_store(&cfg).unwrap();
        let tasks = make_cascade_random_split(&s, SplitRatios::new(0.7, 0.15, 0.15).unwrap(), 1.0, 1.0, 1).unwrap();
        assert_eq!(tasks.len(), 60);
        for t in &tasks {
            let observed = t.observed.len() as f64;
            let expected = (3.0 * observed).round();
            assert!((t.popularity_label as f64 - expected).abs() <= 1.0, "{} vs {}", t.popularity_label, expected);
            assert_eq!(t.conversion_label, 2 * t.popularity_label);
        }
    }

    #[test]
    fn recency_store_spans_four_windows() {
        let s = recency_store(&RecencyConfig::default()).unwrap();
        let (lo, hi) = s.time_span().unwrap();
        assert_eq!((lo, hi), (0.0, 40.0));
        let tasks = crate::splitter::make_time_ordered_split(&s, 10.0).unwrap();
        assert!(tasks.len() >= 3 * 120);
    }
}
