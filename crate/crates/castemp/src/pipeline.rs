//! Building blocks shared by the subcommands, and the end-to-end run.

use std::path::{Path, PathBuf};
use std::time::Instant;

use castemp_core::metrics::MetricsReport;
use castemp_core::model::{Model, ModelConfig};
use castemp_core::precompute::{precompute, PrecomputeConfig, Precomputed};
use castemp_core::splitter::{make_cascade_random_split, make_time_ordered_split_with, PredictionTask, SplitKind};
use castemp_core::store::StoreSummary;
use castemp_core::trainer::{evaluate, Dataset, Prediction, Stage, TrainConfig, TrainOutcome, Trainer};
use castemp_core::CascadeStore;
use serde::{Deserialize, Serialize};

use crate::checkpoint::save_checkpoint;
use crate::config::{RunConfig, SplitModeName, SplitSettings};
use crate::error::{Error, Result, StageExt};
use crate::graphfile::write_compgraph;
use crate::io::{create_file, load_events, write_json, write_jsonl};
use crate::manifest::write_manifest;
use crate::seqfile::{write_sequences, SequenceRecord};

pub fn make_tasks(store: &CascadeStore, s: &SplitSettings) -> Result<Vec<PredictionTask>> {
    let missing = |k: &str| Error::config(k, "required by the chosen split mode");
    let tasks = match s.mode {
        SplitModeName::TimeOrdered => {
            make_time_ordered_split_with(store, s.window.ok_or_else(|| missing("window"))?, s.scope)?
        }
        SplitModeName::CascadeRandom => make_cascade_random_split(
            store,
            s.ratios,
            s.observe.ok_or_else(|| missing("observe"))?,
            s.horizon.ok_or_else(|| missing("horizon"))?,
            s.seed,
        )?,
    };
    Ok(tasks)
}

/// `cfg` with the feature dimensions of `store`.
pub fn model_config(cfg: &ModelConfig, store: &CascadeStore) -> ModelConfig {
    let dims = ModelConfig::for_store(store);
    let mut out = *cfg;
    out.encoder.d_n = dims.encoder.d_n;
    out.d_s = dims.d_s;
    out
}

pub fn prepare(store: &CascadeStore, tasks: &[PredictionTask], mcfg: &ModelConfig) -> Result<Precomputed> {
    Ok(precompute(store, tasks, &PrecomputeConfig::for_model(mcfg))?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub train_msle: f64,
    pub val_msle: Option<f64>,
    pub wall_seconds: f64,
}

/// Trains like [`castemp_core::trainer::train`], timing each epoch.
pub fn train_logged(model: Model, data: Dataset, cfg: TrainConfig) -> Result<(TrainOutcome, Vec<EpochRow>)> {
    let mut t = Trainer::new(model, data, cfg)?;
    let mut rows = Vec::with_capacity(cfg.epochs);
    while !t.is_done() {
        let start = Instant::now();
        let log = t.run_epoch()?;
        rows.push(EpochRow {
            epoch: log.epoch,
            train_msle: log.train_msle,
            val_msle: log.val_msle,
            wall_seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok((t.finish(), rows))
}

pub fn write_epoch_log(path: &Path, rows: &[EpochRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create_file(path)?);
    let wrap = |e: csv::Error| Error::format(path, e.to_string());
    w.write_record(["epoch", "train_msle", "val_msle", "wall_seconds"]).map_err(wrap)?;
    for r in rows {
        let val = r.val_msle.map_or_else(String::new, |v| v.to_string());
        w.write_record([r.epoch.to_string(), r.train_msle.to_string(), val, r.wall_seconds.to_string()])
            .map_err(wrap)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub cascade_id: String,
    pub cutoff: f64,
    pub split: String,
    pub y_pop: f64,
    pub y_con: f64,
    pub popularity_label: u32,
    pub conversion_label: u32,
}

pub fn prediction_rows(store: &CascadeStore, tasks: &[PredictionTask], preds: &[Prediction]) -> Vec<PredictionRow> {
    preds
        .iter()
        .map(|p| PredictionRow {
            cascade_id: store.cascade_name(p.cascade).to_string(),
            cutoff: tasks[p.task].cutoff,
            split: p.split.as_str().to_string(),
            y_pop: p.y_pop,
            y_con: p.y_con,
            popularity_label: p.popularity_label,
            conversion_label: p.conversion_label,
        })
        .collect()
}

/// Contents of `metrics.json`. Holds no timings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub popularity: MetricsReport,
    pub conversion: Option<MetricsReport>,
    pub best_epoch_pop: usize,
    pub best_epoch_con: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub status: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl TaskCounts {
    pub fn of(tasks: &[PredictionTask]) -> Self {
        let n = |k| tasks.iter().filter(|t| t.split == k).count();
        TaskCounts { train: n(SplitKind::Train), val: n(SplitKind::Val), test: n(SplitKind::Test) }
    }
}

/// Contents of `manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub store: StoreSummary,
    pub tasks: TaskCounts,
    pub stages: Vec<StageRecord>,
    pub artifacts: Vec<String>,
}

impl RunManifest {
    pub fn stage(&self, name: &str) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.stage == name)
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub metrics: RunMetrics,
    pub manifest: RunManifest,
    pub dir: PathBuf,
}

/// Copy of `cfg` with absolute data paths.
pub fn snapshot(cfg: &RunConfig) -> RunConfig {
    let abs = |p: &PathBuf| std::fs::canonicalize(p).unwrap_or_else(|_| p.clone());
    let mut out = cfg.clone();
    out.data.diffusion = abs(&cfg.data.diffusion);
    out.data.conversions = cfg.data.conversions.as_ref().map(abs);
    out.data.promoter_features = cfg.data.promoter_features.as_ref().map(abs);
    out.data.cascade_features = cfg.data.cascade_features.as_ref().map(abs);
    out
}

struct Recorder {
    stages: Vec<StageRecord>,
    artifacts: Vec<String>,
    clock: Instant,
}

impl Recorder {
    fn done(&mut self, stage: &str, status: impl Into<String>) {
        self.stages.push(StageRecord { stage: stage.into(), status: status.into(), seconds: self.clock.elapsed().as_secs_f64() });
        self.clock = Instant::now();
    }

    fn file(&mut self, dir: &Path, name: &str) -> PathBuf {
        self.artifacts.push(name.to_string());
        dir.join(name)
    }
}

/// split, precompute, popularity training, conversion training (when the
/// store has conversions) and evaluation, with every artifact under `out`.
pub fn run_pipeline(cfg: &RunConfig, out: &Path) -> Result<RunOutput> {
    cfg.validate().stage("config")?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e)).stage("config")?;
    let mut rec = Recorder { stages: Vec::new(), artifacts: Vec::new(), clock: Instant::now() };
    let snap = snapshot(cfg);
    let path = rec.file(out, "config.txt");
    std::fs::write(&path, snap.to_text()).map_err(|e| Error::io(&path, e)).stage("config")?;

    let store = load_events(&cfg.data).stage("load")?;
    rec.done("load", "ok");

    let tasks = make_tasks(&store, &cfg.split).stage("split")?;
    write_manifest(&rec.file(out, "tasks.jsonl"), &store, &tasks).stage("split")?;
    rec.done("split", format!("{} tasks", tasks.len()));

    let mcfg = model_config(&cfg.model, &store);
    mcfg.validate().stage("precompute")?;
    let pre = prepare(&store, &tasks, &mcfg).stage("precompute")?;
    for (k, ctx) in pre.contexts.iter().enumerate() {
        write_compgraph(&rec.file(out, &format!("compgraph_{k:03}.txt")), &ctx.graph, ctx.cutoff).stage("precompute")?;
    }
    let records: Vec<SequenceRecord> = pre.inputs.iter().map(SequenceRecord::of).collect();
    write_sequences(&rec.file(out, "sequences.ctsq"), &records).stage("precompute")?;
    rec.done("precompute", format!("{} graphs", pre.contexts.len()));

    let data = Dataset { store: &store, tasks: &tasks, pre: &pre };
    let model = Model::new(mcfg, cfg.train.seed).stage("train-pop")?;
    let pop_cfg = TrainConfig { stage: Stage::Popularity, ..cfg.train };
    let (pop, rows) = train_logged(model, data, pop_cfg).stage("train-pop")?;
    write_epoch_log(&rec.file(out, "epochs_pop.csv"), &rows).stage("train-pop")?;
    save_checkpoint(&rec.file(out, "checkpoint_pop.ckpt"), &pop.model, "pop", pop.best_epoch).stage("train-pop")?;
    rec.done("train-pop", format!("best epoch {}", pop.best_epoch));

    let mut final_model = pop.model;
    let mut best_epoch_con = None;
    if cfg.data.conversions.is_none() {
        rec.done("train-con", "skipped: no conversion file");
    } else if store.conversions().is_empty() {
        rec.done("train-con", "skipped: no conversion events");
    } else {
        let con_cfg = TrainConfig { stage: Stage::Conversion, ..cfg.train };
        let (con, rows) = train_logged(final_model, data, con_cfg).stage("train-con")?;
        write_epoch_log(&rec.file(out, "epochs_con.csv"), &rows).stage("train-con")?;
        save_checkpoint(&rec.file(out, "checkpoint_con.ckpt"), &con.model, "con", con.best_epoch).stage("train-con")?;
        rec.done("train-con", format!("best epoch {}", con.best_epoch));
        best_epoch_con = Some(con.best_epoch);
        final_model = con.model;
    }

    let e = cfg.train;
    let pop_eval = evaluate(&final_model, &data, cfg.eval_split, Stage::Popularity, e.batch_size, e.norm).stage("evaluate")?;
    let conversion = match best_epoch_con {
        Some(_) => Some(evaluate(&final_model, &data, cfg.eval_split, Stage::Conversion, e.batch_size, e.norm).stage("evaluate")?.report),
        None => None,
    };
    let metrics = RunMetrics { popularity: pop_eval.report, conversion, best_epoch_pop: pop.best_epoch, best_epoch_con };
    write_json(&rec.file(out, "metrics.json"), &metrics).stage("evaluate")?;
    write_jsonl(&rec.file(out, "predictions.jsonl"), prediction_rows(&store, &tasks, &pop_eval.predictions)).stage("evaluate")?;
    rec.done("evaluate", cfg.eval_split.as_str());

    rec.artifacts.push("manifest.json".into());
    let manifest = RunManifest { store: store.summary(), tasks: TaskCounts::of(&tasks), stages: rec.stages, artifacts: rec.artifacts };
    write_json(&out.join("manifest.json"), &manifest).stage("evaluate")?;
    Ok(RunOutput { metrics, manifest, dir: out.to_path_buf() })
}
