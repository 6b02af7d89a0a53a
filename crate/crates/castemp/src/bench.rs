//! Wall-clock timings of graph construction, sequence precompute and one
//! training epoch.

use std::time::Instant;

use castemp_core::model::{Model, ModelConfig};
use castemp_core::precompute::{distinct_cutoffs, graph_contexts, task_inputs, PrecomputeConfig, Precomputed};
use castemp_core::sequences::WalkIndex;
use castemp_core::splitter::{PredictionTask, SplitKind};
use castemp_core::trainer::{Dataset, TrainConfig, Trainer};
use castemp_core::CascadeStore;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::pipeline::model_config;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub cascades: usize,
    pub diffusion_events: usize,
    pub conversion_events: usize,
    pub tasks: usize,
    pub train_tasks: usize,
    pub cutoffs: usize,
    pub graph_edges: usize,
    pub compgraph_seconds: f64,
    pub sequences_seconds: f64,
    pub epoch_seconds: f64,
}

impl BenchReport {
    pub fn precompute_seconds(&self) -> f64 {
        self.compgraph_seconds + self.sequences_seconds
    }
}

pub fn bench_precompute(store: &CascadeStore, tasks: &[PredictionTask], model: &ModelConfig, train: &TrainConfig) -> Result<BenchReport> {
    let summary = store.summary();
    let mut report = BenchReport {
        cascades: summary.cascades,
        diffusion_events: summary.diffusion_events,
        conversion_events: summary.conversion_events,
        tasks: tasks.len(),
        ..BenchReport::default()
    };
    if tasks.is_empty() {
        return Ok(report);
    }
    let mcfg = model_config(model, store);
    let pcfg = PrecomputeConfig::for_model(&mcfg);

    let start = Instant::now();
    let (cutoffs, which) = distinct_cutoffs(tasks);
    let contexts = if pcfg.build_graph { graph_contexts(store, &cutoffs, &pcfg)? } else { Vec::new() };
    report.compgraph_seconds = start.elapsed().as_secs_f64();
    report.cutoffs = cutoffs.len();
    report.graph_edges = contexts.iter().map(|c| c.graph.num_edges()).sum();

    let start = Instant::now();
    let index = WalkIndex::new(store);
    let inputs = tasks
        .iter()
        .zip(&which)
        .map(|(t, &k)| task_inputs(store, &index, t, contexts.get(k).map(|c| (k, &c.graph)), &pcfg))
        .collect::<castemp_core::Result<Vec<_>>>()?;
    report.sequences_seconds = start.elapsed().as_secs_f64();

    let pre = Precomputed { contexts, inputs };
    let data = Dataset { store, tasks, pre: &pre };
    report.train_tasks = data.split_indices(SplitKind::Train).len();
    if report.train_tasks > 0 {
        let mut t = Trainer::new(Model::new(mcfg, train.seed)?, data, TrainConfig { epochs: 1, ..*train })?;
        let start = Instant::now();
        t.run_epoch()?;
        report.epoch_seconds = start.elapsed().as_secs_f64();
    }
    Ok(report)
}
