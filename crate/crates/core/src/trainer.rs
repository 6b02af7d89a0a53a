//! Two-stage gradient-descent training, evaluation and prediction dumps.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::TimeNorm;
use crate::error::{Error, Result};
use crate::math;
use crate::metrics::{self, MetricsReport};
use crate::model::{Ablation, Architecture, ForwardEnv, Model};
use crate::params::{Grads, ParamStore};
use crate::precompute::Precomputed;
use crate::splitter::{PredictionTask, SplitKind};
use crate::store::{CascadeId, CascadeStore};
use crate::tape::Tape;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Stage {
    #[default]
    Popularity,
    Conversion,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Popularity => "pop",
            Stage::Conversion => "con",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "pop" | "popularity" => Some(Stage::Popularity),
            "con" | "conversion" => Some(Stage::Conversion),
            _ => None,
        }
    }

    pub fn label(self, task: &PredictionTask) -> f64 {
        match self {
            Stage::Popularity => task.popularity_label as f64,
            Stage::Conversion => task.conversion_label as f64,
        }
    }
}

/// Where the min/max of the time normalization come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum NormMode {
    #[default]
    Batch,
    Global,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub stage: Stage,
    pub norm: NormMode,
    /// Rescales the batch gradient to at most this L2 norm.
    pub clip: Option<f64>,
    /// Starts the trained head's output bias at the mean training label.
    pub init_output_bias: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            learning_rate: 0.01,
            batch_size: 64,
            seed: 0,
            stage: Stage::Popularity,
            norm: NormMode::Batch,
            clip: None,
            init_output_bias: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidParameter { name: "epochs", reason: "must be at least 1".into() });
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidParameter { name: "learning_rate", reason: "must be non-negative".into() });
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidParameter { name: "batch_size", reason: "must be at least 1".into() });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_msle: f64,
    pub val_msle: Option<f64>,
}

pub fn msle_loss(pred: &[f64], target: &[f64]) -> Result<f64> {
    metrics::msle(pred, target)
}

/// Everything training and evaluation read.
#[derive(Clone, Copy)]
pub struct Dataset<'a> {
    pub store: &'a CascadeStore,
    pub tasks: &'a [PredictionTask],
    pub pre: &'a Precomputed,
}

impl<'a> Dataset<'a> {
    /// Checks that every task has the inputs `model` consumes.
    pub fn check(&self, model: &Model) -> Result<()> {
        if self.pre.inputs.len() != self.tasks.len() {
            return Err(Error::LengthMismatch { what: "tasks vs precomputed inputs", left: self.tasks.len(), right: self.pre.inputs.len() });
        }
        let cfg = &model.config;
        for (i, inp) in self.pre.inputs.iter().enumerate() {
            if cfg.architecture == Architecture::AuxBaseline {
                continue;
            }
            let graph_ok = cfg.ablation == Ablation::NoCcg || inp.graph.is_some_and(|g| g < self.pre.contexts.len());
            let cross_ok = !cfg.needs_cross() || inp.cross_seq.is_some();
            let mixed_ok = cfg.ablation != Ablation::CpsMixed || inp.mixed_seq.is_some();
            if !(graph_ok && cross_ok && mixed_ok) || inp.cascade != self.tasks[i].cascade {
                return Err(Error::MissingPrecompute(i));
            }
        }
        Ok(())
    }

    pub fn split_indices(&self, split: SplitKind) -> Vec<usize> {
        crate::splitter::tasks_of(self.tasks, split)
    }

    fn norm_over(&self, indices: &[usize]) -> TimeNorm {
        TimeNorm::from_times(indices.iter().flat_map(|&i| self.pre.inputs[i].real_times()))
            .unwrap_or(TimeNorm { min: 0.0, max: 0.0 })
    }
}

fn loss_gradients(
    model: &Model,
    data: &Dataset,
    trainable: &[bool],
    batch: &[usize],
    norm: TimeNorm,
    stage: Stage,
    grads: &mut Grads,
) -> Result<f64> {
    let env = ForwardEnv { store: data.store, contexts: &data.pre.contexts, norm };
    let mut tape = Tape::new(&model.params, trainable);
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    for &i in batch {
        tape.clear();
        let out = model.forward(&mut tape, &env, i, &data.pre.inputs[i])?;
        let y = match stage {
            Stage::Popularity => out.pop,
            Stage::Conversion => out.con,
        };
        let ly = tape.ln_1p(y);
        let diff = tape.add_scalar(ly, -math::ln_1p(stage.label(&data.tasks[i])));
        let sq = tape.square(diff);
        total += tape.scalar(sq);
        tape.backward(sq, scale, grads);
    }
    Ok(total * scale)
}

/// Mean loss and its gradient over `batch` with the given normalization.
pub fn batch_gradients(model: &Model, data: &Dataset, batch: &[usize], stage: Stage, norm: TimeNorm) -> Result<(f64, Grads)> {
    let trainable = model.stage_mask(stage == Stage::Conversion);
    let mut grads = Grads::zeros_like(&model.params);
    let loss = loss_gradients(model, data, &trainable, batch, norm, stage, &mut grads)?;
    Ok((loss, grads))
}

/// Batch time normalization as used in training.
pub fn batch_norm(data: &Dataset, batch: &[usize]) -> TimeNorm {
    data.norm_over(batch)
}

/// `(pop, con)` predictions for `indices`, batched in the given order.
pub fn predict(model: &Model, data: &Dataset, indices: &[usize], batch_size: usize, norm: NormMode) -> Result<Vec<(f64, f64)>> {
    let frozen = alloc::vec![false; model.params.len()];
    let global = data.norm_over(indices);
    let mut out = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(batch_size.max(1)) {
        let n = match norm {
            NormMode::Batch => data.norm_over(chunk),
            NormMode::Global => global,
        };
        let env = ForwardEnv { store: data.store, contexts: &data.pre.contexts, norm: n };
        let mut tape = Tape::new(&model.params, &frozen);
        for &i in chunk {
            tape.clear();
            let o = model.forward(&mut tape, &env, i, &data.pre.inputs[i])?;
            out.push((tape.scalar(o.pop), tape.scalar(o.con)));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub task: usize,
    pub cascade: CascadeId,
    pub split: SplitKind,
    pub y_pop: f64,
    pub y_con: f64,
    pub popularity_label: u32,
    pub conversion_label: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub predictions: Vec<Prediction>,
}

/// Metrics of the `stage` head over `split`, plus per-task predictions.
pub fn evaluate(
    model: &Model,
    data: &Dataset,
    split: SplitKind,
    stage: Stage,
    batch_size: usize,
    norm: NormMode,
) -> Result<Evaluation> {
    let idx = data.split_indices(split);
    if idx.is_empty() {
        return Err(Error::EmptySplit(split.as_str()));
    }
    let preds = predict(model, data, &idx, batch_size, norm)?;
    let predictions: Vec<Prediction> = idx
        .iter()
        .zip(&preds)
        .map(|(&i, &(y_pop, y_con))| {
            let t = &data.tasks[i];
            Prediction {
                task: i,
                cascade: t.cascade,
                split,
                y_pop,
                y_con,
                popularity_label: t.popularity_label,
                conversion_label: t.conversion_label,
            }
        })
        .collect();
    let (p, y): (Vec<f64>, Vec<f64>) = predictions
        .iter()
        .map(|p| match stage {
            Stage::Popularity => (p.y_pop, p.popularity_label as f64),
            Stage::Conversion => (p.y_con, p.conversion_label as f64),
        })
        .unzip();
    Ok(Evaluation { report: MetricsReport::compute(split.as_str(), &p, &y)?, predictions })
}

pub fn split_msle(model: &Model, data: &Dataset, indices: &[usize], stage: Stage, batch_size: usize, norm: NormMode) -> Result<f64> {
    let preds = predict(model, data, indices, batch_size, norm)?;
    let (p, y): (Vec<f64>, Vec<f64>) = indices
        .iter()
        .zip(preds)
        .map(|(&i, (a, b))| (if stage == Stage::Popularity { a } else { b }, stage.label(&data.tasks[i])))
        .unzip();
    metrics::msle(&p, &y)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the best epoch.
    pub model: Model,
    pub logs: Vec<EpochLog>,
    pub best_epoch: usize,
}

pub struct Trainer<'a> {
    data: Dataset<'a>,
    cfg: TrainConfig,
    model: Model,
    trainable: Vec<bool>,
    train_idx: Vec<usize>,
    val_idx: Vec<usize>,
    global_norm: TimeNorm,
    epoch: usize,
    logs: Vec<EpochLog>,
    best: Option<(f64, usize, ParamStore)>,
}

impl<'a> Trainer<'a> {
    pub fn new(mut model: Model, data: Dataset<'a>, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        data.check(&model)?;
        let train_idx = data.split_indices(SplitKind::Train);
        if train_idx.is_empty() {
            return Err(Error::EmptySplit("train"));
        }
        let val_idx = data.split_indices(SplitKind::Val);
        if cfg.init_output_bias {
            let mean = train_idx.iter().map(|&i| cfg.stage.label(&data.tasks[i])).sum::<f64>() / train_idx.len() as f64;
            model.set_output_bias(cfg.stage == Stage::Conversion, mean);
        }
        let trainable = model.stage_mask(cfg.stage == Stage::Conversion);
        let global_norm = data.norm_over(&train_idx);
        Ok(Trainer { data, cfg, model, trainable, train_idx, val_idx, global_norm, epoch: 0, logs: Vec::new(), best: None })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn logs(&self) -> &[EpochLog] {
        &self.logs
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    pub fn is_done(&self) -> bool {
        self.epoch >= self.cfg.epochs
    }

    fn epoch_order(&self) -> Vec<usize> {
        let mut order = self.train_idx.clone();
        let seed = self.cfg.seed ^ (self.epoch as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        order
    }

    pub fn run_epoch(&mut self) -> Result<EpochLog> {
        let order = self.epoch_order();
        let mut grads = Grads::zeros_like(&self.model.params);
        let mut total = 0.0;
        for batch in order.chunks(self.cfg.batch_size) {
            let norm = match self.cfg.norm {
                NormMode::Batch => self.data.norm_over(batch),
                NormMode::Global => self.global_norm,
            };
            grads.clear();
            let loss = loss_gradients(&self.model, &self.data, &self.trainable, batch, norm, self.cfg.stage, &mut grads)?;
            total += loss * batch.len() as f64;
            grads.check_finite(&self.model.params)?;
            if let Some(c) = self.cfg.clip {
                grads.clip_norm(c);
            }
            self.model.params.sgd_step(&grads, self.cfg.learning_rate, &self.trainable);
        }
        self.epoch += 1;
        let train_msle = total / order.len() as f64;
        let val_msle = if self.val_idx.is_empty() {
            None
        } else {
            Some(split_msle(&self.model, &self.data, &self.val_idx, self.cfg.stage, self.cfg.batch_size, self.cfg.norm)?)
        };
        let score = val_msle.unwrap_or(train_msle);
        if self.best.as_ref().is_none_or(|b| score < b.0) {
            self.best = Some((score, self.epoch, self.model.params.clone()));
        }
        let log = EpochLog { epoch: self.epoch, train_msle, val_msle };
        self.logs.push(log.clone());
        Ok(log)
    }

    pub fn finish(self) -> TrainOutcome {
        let mut model = self.model;
        let best_epoch = match self.best {
            Some((_, epoch, params)) => {
                model.params = params;
                epoch
            }
            None => 0,
        };
        TrainOutcome { model, logs: self.logs, best_epoch }
    }
}

pub fn train(model: Model, data: Dataset, cfg: TrainConfig) -> Result<TrainOutcome> {
    let mut t = Trainer::new(model, data, cfg)?;
    while !t.is_done() {
        t.run_epoch()?;
    }
    Ok(t.finish())
}
