//! Leakage audit: the auxiliary-feature baseline trained and tested on both toy
//! scenarios under cascade-random and time-ordered splitting.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::metrics::MetricsReport;
use crate::model::{Architecture, Model, ModelConfig};
use crate::precompute::{precompute, PrecomputeConfig};
use crate::splitter::{make_cascade_split_assigned, make_time_ordered_split, PredictionTask, SplitKind};
use crate::store::CascadeStore;
use crate::toygen::{generate_toy, ToyScenario};
use crate::trainer::{evaluate, train, Dataset, NormMode, Stage, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AuditSplit {
    CascadeRandom,
    TimeOrdered,
}

impl AuditSplit {
    pub fn as_str(self) -> &'static str {
        match self {
            AuditSplit::CascadeRandom => "cascade-random",
            AuditSplit::TimeOrdered => "time-ordered",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuditConfig {
    pub seed: u64,
    pub train: TrainConfig,
    /// Observation length of the cascade-random split.
    pub observe: f64,
    /// Prediction horizon of the cascade-random split.
    pub horizon: f64,
}

impl Default for AuditConfig {
    fn default() -> Self {
        AuditConfig { seed: 0, train: TrainConfig::default(), observe: 1.0, horizon: 2.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditCell {
    pub scenario: u8,
    pub split: AuditSplit,
    pub test: MetricsReport,
    pub n_train: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub cells: Vec<AuditCell>,
    /// Scenario 2 over scenario 1 test MSLE under cascade-random splitting.
    pub random_ratio: f64,
    /// Scenario 1 over scenario 2 test MSLE under time-ordered splitting.
    pub time_ordered_ratio: f64,
    pub random_verdict: bool,
    pub time_ordered_verdict: bool,
}

impl AuditReport {
    pub fn cell(&self, scenario: u8, split: AuditSplit) -> Option<&AuditCell> {
        self.cells.iter().find(|c| c.scenario == scenario && c.split == split)
    }
}

/// Time-ordered window covering the toy timeline in four equal parts.
pub fn toy_window(store: &CascadeStore) -> f64 {
    store.time_span().map(|(a, b)| (b - a) / 4.0).unwrap_or(1.0)
}

pub fn audit_tasks(scenario: u8, split: AuditSplit, cfg: &AuditConfig) -> Result<(CascadeStore, Vec<PredictionTask>)> {
    let toy = generate_toy(&ToyScenario::new(scenario, cfg.seed))?;
    let tasks = match split {
        AuditSplit::CascadeRandom => make_cascade_split_assigned(&toy.store, &toy.assignment, cfg.observe, cfg.horizon)?,
        AuditSplit::TimeOrdered => make_time_ordered_split(&toy.store, toy_window(&toy.store))?,
    };
    Ok((toy.store, tasks))
}

pub fn audit_cell(scenario: u8, split: AuditSplit, cfg: &AuditConfig) -> Result<AuditCell> {
    let (store, tasks) = audit_tasks(scenario, split, cfg)?;
    let mcfg = ModelConfig { architecture: Architecture::AuxBaseline, ..ModelConfig::for_store(&store) };
    let pre = precompute(&store, &tasks, &PrecomputeConfig::for_model(&mcfg))?;
    let data = Dataset { store: &store, tasks: &tasks, pre: &pre };
    let model = Model::new(mcfg, cfg.seed)?;
    let tcfg = TrainConfig { seed: cfg.seed, stage: Stage::Popularity, ..cfg.train };
    let outcome = train(model, data, tcfg)?;
    let eval = evaluate(&outcome.model, &data, SplitKind::Test, Stage::Popularity, tcfg.batch_size, NormMode::Batch)?;
    Ok(AuditCell { scenario, split, test: eval.report, n_train: data.split_indices(SplitKind::Train).len() })
}

pub fn leakage_audit(cfg: &AuditConfig) -> Result<AuditReport> {
    let mut cells = Vec::with_capacity(4);
    for split in [AuditSplit::CascadeRandom, AuditSplit::TimeOrdered] {
        for scenario in [1u8, 2] {
            cells.push(audit_cell(scenario, split, cfg)?);
        }
    }
    Ok(report_from(cells))
}

pub fn report_from(cells: Vec<AuditCell>) -> AuditReport {
    let msle = |s: u8, m: AuditSplit| cells.iter().find(|c| c.scenario == s && c.split == m).map_or(f64::NAN, |c| c.test.msle);
    let random_ratio = msle(2, AuditSplit::CascadeRandom) / msle(1, AuditSplit::CascadeRandom);
    let time_ordered_ratio = msle(1, AuditSplit::TimeOrdered) / msle(2, AuditSplit::TimeOrdered);
    AuditReport {
        random_verdict: random_ratio < 0.5,
        time_ordered_verdict: (0.5..=2.0).contains(&time_ordered_ratio),
        random_ratio,
        time_ordered_ratio,
        cells,
    }
}
