//! The two-scenario toy dataset used to expose time-travel leakage.
//!
//! Every cascade follows one of three templates over `[0, 3]`:
//!
//! | template | root  | onset | phases                                   |
//! |----------|-------|-------|------------------------------------------|
//! | c0       | `u0`  | 0     | quiet [0,1], burst [1,2], decay [2,3]    |
//! | c1       | `u0`  | 1     | burst [1,2], decay [2,3]                 |
//! | c2       | `u12` | 0     | quiet [0,1], decay [1,2], burst [2,3]    |
//!
//! Scenario 1 pairs c0 training cascades with c1 test cascades, scenario 2
//! pairs them with c2.

use alloc::format;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::splitter::SplitKind;
use crate::store::{CascadeId, CascadeStore, StoreBuilder};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Template {
    C0,
    C1,
    C2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PhaseKind {
    Quiet,
    Burst,
    Decay,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub kind: PhaseKind,
    pub start: f64,
    pub end: f64,
}

impl Template {
    pub fn name(self) -> &'static str {
        match self {
            Template::C0 => "c0",
            Template::C1 => "c1",
            Template::C2 => "c2",
        }
    }

    pub fn root(self) -> &'static str {
        match self {
            Template::C2 => "u12",
            _ => "u0",
        }
    }

    pub fn onset(self) -> f64 {
        match self {
            Template::C1 => 1.0,
            _ => 0.0,
        }
    }

    pub fn phases(self) -> Vec<Phase> {
        use PhaseKind::*;
        let p = |kind, start, end| Phase { kind, start, end };
        match self {
            Template::C0 => alloc::vec![p(Quiet, 0.0, 1.0), p(Burst, 1.0, 2.0), p(Decay, 2.0, 3.0)],
            Template::C1 => alloc::vec![p(Burst, 1.0, 2.0), p(Decay, 2.0, 3.0)],
            Template::C2 => alloc::vec![p(Quiet, 0.0, 1.0), p(Decay, 1.0, 2.0), p(Burst, 2.0, 3.0)],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyRates {
    pub quiet: f64,
    pub burst: f64,
    pub decay: f64,
    pub jitter_low: f64,
    pub jitter_high: f64,
}

impl Default for ToyRates {
    fn default() -> Self {
        ToyRates { quiet: 0.5, burst: 20.0, decay: 4.0, jitter_low: 0.8, jitter_high: 1.2 }
    }
}

impl ToyRates {
    pub fn rate(&self, kind: PhaseKind) -> f64 {
        match kind {
            PhaseKind::Quiet => self.quiet,
            PhaseKind::Burst => self.burst,
            PhaseKind::Decay => self.decay,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyScenario {
    pub id: u8,
    pub n_cascades: usize,
    pub train_fraction: f64,
    pub seed: u64,
    pub pool_size: usize,
    pub rates: ToyRates,
}

impl ToyScenario {
    pub fn new(id: u8, seed: u64) -> Self {
        ToyScenario { id, n_cascades: 100, train_fraction: 0.7, seed, pool_size: 200, rates: ToyRates::default() }
    }

    pub fn n_train(&self) -> usize {
        (self.n_cascades as f64 * self.train_fraction).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.id != 1 && self.id != 2 {
            return Err(Error::InvalidParameter { name: "scenario", reason: "must be 1 or 2".into() });
        }
        let exact = self.n_cascades as f64 * self.train_fraction;
        if (exact - exact.round()).abs() > 1e-9 || !(0.0..=1.0).contains(&self.train_fraction) {
            return Err(Error::InvalidParameter { name: "train_fraction", reason: "n_cascades x train_fraction must be an integer".into() });
        }
        if self.pool_size < 13 {
            return Err(Error::InvalidParameter { name: "pool_size", reason: "must hold u0..u12".into() });
        }
        Ok(())
    }

    pub fn test_template(&self) -> Template {
        if self.id == 1 {
            Template::C1
        } else {
            Template::C2
        }
    }
}

#[derive(Debug, Clone)]
pub struct ToyDataset {
    pub store: CascadeStore,
    pub templates: Vec<Template>,
    /// Train cascades use c0, test cascades the scenario's test template.
    pub assignment: Vec<(CascadeId, SplitKind)>,
}

impl ToyDataset {
    pub fn cascades_of(&self, template: Template) -> impl Iterator<Item = CascadeId> + '_ {
        self.templates.iter().enumerate().filter(move |(_, t)| **t == template).map(|(i, _)| CascadeId(i as u32))
    }
}

pub const T0: f64 = 0.0;
pub const T3: f64 = 3.0;

pub fn generate_toy(scenario: &ToyScenario) -> Result<ToyDataset> {
    scenario.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed ^ ((scenario.id as u64) << 56));
    let mut b = StoreBuilder::new();
    let n_train = scenario.n_train();
    let mut templates = Vec::with_capacity(scenario.n_cascades);
    let mut assignment = Vec::with_capacity(scenario.n_cascades);
    for k in 0..scenario.n_cascades {
        let (template, split) = if k < n_train { (Template::C0, SplitKind::Train) } else { (scenario.test_template(), SplitKind::Test) };
        let name = format!("s{}_{}_{k:03}", scenario.id, template.name());
        let c = b.intern_cascade(&name);
        templates.push(template);
        assignment.push((c, split));
        emit_cascade(&mut b, &mut rng, &name, template, scenario)?;
    }
    Ok(ToyDataset { store: b.build(), templates, assignment })
}

fn emit_cascade(b: &mut StoreBuilder, rng: &mut ChaCha8Rng, name: &str, template: Template, sc: &ToyScenario) -> Result<()> {
    let jitter = rng.random_range(sc.rates.jitter_low..=sc.rates.jitter_high);
    let mut times = Vec::new();
    for phase in template.phases() {
        let mean = sc.rates.rate(phase.kind) * (phase.end - phase.start) * jitter;
        let n = if mean > 0.0 {
            let d = Poisson::new(mean).map_err(|_| Error::InvalidParameter { name: "rate", reason: "Poisson mean".into() })?;
            d.sample(rng) as usize
        } else {
            0
        };
        for _ in 0..n {
            times.push(rng.random_range(phase.start..phase.end));
        }
    }
    times.sort_by(f64::total_cmp);
    let pool = |rng: &mut ChaCha8Rng| format!("u{}", rng.random_range(0..sc.pool_size));
    let root = template.root();
    let mut participants = alloc::vec![alloc::string::String::from(root)];
    let mut tgt = pool(rng);
    while tgt == root {
        tgt = pool(rng);
    }
    b.add_diffusion(name, root, &tgt, template.onset(), None)?;
    participants.push(tgt);
    for t in times {
        let src = participants[rng.random_range(0..participants.len())].clone();
        let mut tgt = pool(rng);
        while tgt == src {
            tgt = pool(rng);
        }
        b.add_diffusion(name, &src, &tgt, t, None)?;
        participants.push(tgt);
    }
    Ok(())
}

/// Mean event time of every cascade following `template`.
pub fn template_mean_time(data: &ToyDataset, template: Template) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for c in data.cascades_of(template) {
        for &e in data.store.cascade_events(c).ok()? {
            sum += data.store.diffusion()[e as usize].time;
            n += 1;
        }
    }
    (n > 0).then(|| sum / n as f64)
}

/// Event-time histogram of a template's cascades over `[T0, T3]`.
pub fn template_histogram(data: &ToyDataset, template: Template, bins: usize) -> Vec<u32> {
    let mut h = alloc::vec![0u32; bins];
    let width = (T3 - T0) / bins as f64;
    for c in data.cascades_of(template) {
        for &e in data.store.cascade_events(c).unwrap_or(&[]) {
            let t = data.store.diffusion()[e as usize].time;
            let k = (((t - T0) / width) as usize).min(bins - 1);
            h[k] += 1;
        }
    }
    h
}

/// Earliest event time of each cascade of `template`, averaged.
pub fn template_mean_onset(data: &ToyDataset, template: Template) -> Option<f64> {
    let onsets: Vec<f64> = data
        .cascades_of(template)
        .filter_map(|c| data.store.cascade_events(c).ok()?.first().map(|&e| data.store.diffusion()[e as usize].time))
        .collect();
    (!onsets.is_empty()).then(|| onsets.iter().sum::<f64>() / onsets.len() as f64)
}
