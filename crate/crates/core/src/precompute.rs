//! Per-task model inputs: competition graphs per distinct cutoff, self/cross/
//! mixed sequences and auxiliary features.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::compgraph::{build_competition_graph, CompetitionGraph, SimilarityKind};
use crate::error::Result;
use crate::model::{Ablation, ModelConfig};
use crate::predictor::{auxiliary_features, AuxiliaryFeatures};
use crate::sequences::{mix, self_sequence_from, temporal_walks, PropagationSequence, WalkIndex, WalkParams};
use crate::splitter::PredictionTask;
use crate::store::{CascadeId, CascadeStore, Interval};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecomputeConfig {
    pub lmax: usize,
    pub walks: WalkParams,
    pub tau1: f64,
    pub similarity: SimilarityKind,
    pub build_graph: bool,
    pub cross: bool,
    pub mixed: bool,
}

impl PrecomputeConfig {
    pub fn for_model(cfg: &ModelConfig) -> Self {
        PrecomputeConfig {
            lmax: cfg.lmax,
            walks: cfg.walks,
            tau1: cfg.tau1,
            similarity: cfg.ablation.similarity(),
            build_graph: cfg.needs_graph(),
            cross: cfg.needs_cross(),
            mixed: cfg.ablation == Ablation::CpsMixed,
        }
    }
}

/// Competition graph at one cutoff plus the graph-attention node features
/// (static attributes followed by the historical popularity summary).
#[derive(Debug, Clone)]
pub struct GraphContext {
    pub cutoff: f64,
    pub graph: CompetitionGraph,
    pub node_features: Vec<Vec<f64>>,
}

pub fn node_features(store: &CascadeStore, cutoff: f64) -> Result<Vec<Vec<f64>>> {
    let statics = store.cascade_features();
    store
        .cascade_ids()
        .map(|c| {
            let aux = auxiliary_features(store, c, Interval::closed(f64::NEG_INFINITY, cutoff))?;
            let mut f = statics.get(c.index()).to_vec();
            f.extend_from_slice(&aux.his_pop);
            Ok(f)
        })
        .collect()
}

pub fn graph_context(store: &CascadeStore, cutoff: f64, tau1: f64, kind: SimilarityKind) -> Result<GraphContext> {
    Ok(GraphContext {
        cutoff,
        graph: build_competition_graph(store, cutoff, tau1, kind)?,
        node_features: node_features(store, cutoff)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskInputs {
    pub cascade: CascadeId,
    pub cutoff: f64,
    /// Time of the latest observed event (the decay reference).
    pub t_last: f64,
    pub self_seq: PropagationSequence,
    pub cross_seq: Option<PropagationSequence>,
    pub mixed_seq: Option<PropagationSequence>,
    pub aux: AuxiliaryFeatures,
    pub graph: Option<usize>,
}

impl TaskInputs {
    pub fn real_times(&self) -> impl Iterator<Item = f64> + '_ {
        let own = self.self_seq.real_entries().map(|e| e.1);
        let cross = self.cross_seq.iter().flat_map(|s| s.real_entries().map(|e| e.1));
        own.chain(cross)
    }
}

#[derive(Debug, Clone)]
pub struct Precomputed {
    pub contexts: Vec<GraphContext>,
    pub inputs: Vec<TaskInputs>,
}

/// Distinct cutoffs in first-seen order and the index of each task's cutoff.
pub fn distinct_cutoffs(tasks: &[PredictionTask]) -> (Vec<f64>, Vec<usize>) {
    let mut cutoffs: Vec<f64> = Vec::new();
    let mut index = Vec::with_capacity(tasks.len());
    for t in tasks {
        let k = match cutoffs.iter().position(|c| c.to_bits() == t.cutoff.to_bits()) {
            Some(k) => k,
            None => {
                cutoffs.push(t.cutoff);
                cutoffs.len() - 1
            }
        };
        index.push(k);
    }
    (cutoffs, index)
}

pub fn graph_contexts(store: &CascadeStore, cutoffs: &[f64], cfg: &PrecomputeConfig) -> Result<Vec<GraphContext>> {
    cutoffs.iter().map(|&c| graph_context(store, c, cfg.tau1, cfg.similarity)).collect()
}

/// Inputs for one task given the (optional) graph of its cutoff.
pub fn task_inputs(
    store: &CascadeStore,
    index: &WalkIndex,
    task: &PredictionTask,
    graph: Option<(usize, &CompetitionGraph)>,
    cfg: &PrecomputeConfig,
) -> Result<TaskInputs> {
    let self_seq = self_sequence_from(store, task.cascade, task.observed.clone(), task.cutoff, cfg.lmax)?;
    let t_last = self_seq.times.last().copied().unwrap_or(task.cutoff);
    let cross_seq = match graph {
        Some((_, g)) if cfg.cross => Some(temporal_walks(store, index, g, task.cascade, task.cutoff, &cfg.walks)?),
        _ => None,
    };
    let mixed_seq = match (&cross_seq, cfg.mixed) {
        (Some(c), true) => Some(mix(&self_seq, c, task.cutoff)),
        _ => None,
    };
    Ok(TaskInputs {
        cascade: task.cascade,
        cutoff: task.cutoff,
        t_last,
        self_seq,
        cross_seq,
        mixed_seq,
        aux: auxiliary_features(store, task.cascade, task.observation_interval())?,
        graph: graph.map(|g| g.0),
    })
}

pub fn precompute(store: &CascadeStore, tasks: &[PredictionTask], cfg: &PrecomputeConfig) -> Result<Precomputed> {
    let (cutoffs, which) = distinct_cutoffs(tasks);
    let contexts = if cfg.build_graph { graph_contexts(store, &cutoffs, cfg)? } else { Vec::new() };
    let index = WalkIndex::new(store);
    let inputs = tasks
        .iter()
        .zip(&which)
        .map(|(task, &k)| {
            let graph = contexts.get(k).map(|c| (k, &c.graph));
            task_inputs(store, &index, task, graph, cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Precomputed { contexts, inputs })
}
