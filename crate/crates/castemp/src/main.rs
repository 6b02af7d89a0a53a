use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use castemp::bench::bench_precompute;
use castemp::checkpoint::{load_checkpoint, save_checkpoint};
use castemp::config::{read_config_file, parse_override, RunConfig};
use castemp::error::{Error, Result, StageExt};
use castemp::graphfile::write_compgraph;
use castemp::io::{load_events, write_assignment, write_json, write_jsonl, write_store};
use castemp::manifest::{read_manifest, write_manifest};
use castemp::pipeline::{self, make_tasks, model_config, prediction_rows, train_logged, write_epoch_log};
use castemp::seqfile::{apply_sequences, read_sequences, write_sequences, SequenceRecord};
use castemp_core::audit::{leakage_audit, toy_window, AuditConfig};
use castemp_core::compgraph::{build_competition_graph, SimilarityKind};
use castemp_core::model::Model;
use castemp_core::splitter::{make_time_ordered_split, SplitKind};
use castemp_core::synth::{random_store, RandomStoreConfig};
use castemp_core::toygen::{generate_toy, ToyScenario};
use castemp_core::trainer::{evaluate, Dataset, Stage, TrainConfig};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "castemp", version, about = "Leak-free cascade popularity and conversion prediction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Settings shared by every data-reading subcommand.
#[derive(Args, Default)]
struct Common {
    /// Flat `key = value` config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra `key=value` overrides, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    diffusion: Option<String>,
    #[arg(long)]
    conversions: Option<String>,
    #[arg(long)]
    promoter_features: Option<String>,
    #[arg(long)]
    cascade_features: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a toy leakage scenario as event files.
    Toygen {
        #[arg(long)]
        scenario: u8,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build prediction tasks and write the task manifest.
    Split {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        window: Option<String>,
        #[arg(long)]
        scope: Option<String>,
        #[arg(long)]
        ratios: Option<String>,
        #[arg(long)]
        observe: Option<String>,
        #[arg(long)]
        horizon: Option<String>,
        #[arg(long)]
        seed: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Precompute competition graphs or propagation sequences.
    Precompute {
        #[command(subcommand)]
        what: PrecomputeCommand,
    },
    /// Train one stage and write its checkpoint and epoch log.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        tasks: PathBuf,
        #[arg(long, default_value = "pop")]
        stage: String,
        /// Model to continue from; required for `--stage con`.
        #[arg(long)]
        init: Option<PathBuf>,
        /// Stored sequences to use instead of resampling.
        #[arg(long)]
        sequences: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<String>,
        #[arg(long)]
        lr: Option<String>,
        #[arg(long)]
        batch: Option<String>,
        #[arg(long)]
        seed: Option<String>,
        #[arg(long)]
        ablate: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint on one split.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        tasks: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long, default_value = "pop")]
        stage: String,
        /// Metrics JSON path.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Run the toy leakage audit grid.
    Audit {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        epochs: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Time graph construction, sequence precompute and one epoch.
    Bench {
        #[command(flatten)]
        common: Common,
        /// Size of the generated store when no diffusion file is given.
        #[arg(long, default_value_t = 10_000)]
        cascades: usize,
        #[arg(long, default_value_t = 500_000)]
        events: usize,
        #[arg(long)]
        window: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run split, precompute, both training stages and evaluation.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum PrecomputeCommand {
    Compgraph {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        tau1: Option<String>,
        #[arg(long, default_value = "jaccard")]
        similarity: String,
        #[arg(long)]
        cutoff: f64,
        #[arg(long)]
        out: PathBuf,
    },
    Sequences {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        tasks: PathBuf,
        #[arg(long)]
        lmax: Option<String>,
        #[arg(long)]
        tau2: Option<String>,
        #[arg(long)]
        tau3: Option<String>,
        #[arg(long)]
        seed: Option<String>,
        #[arg(long)]
        ablate: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Config file, then flags, then `--set` overrides.
fn resolve(common: &Common, flags: &[(&str, &Option<String>)]) -> Result<RunConfig> {
    let mut pairs = match &common.config {
        Some(p) => read_config_file(p)?,
        None => BTreeMap::new(),
    };
    let data = [
        ("diffusion", &common.diffusion),
        ("conversions", &common.conversions),
        ("promoter_features", &common.promoter_features),
        ("cascade_features", &common.cascade_features),
    ];
    for (k, v) in data.iter().chain(flags) {
        if let Some(v) = v {
            pairs.insert(k.to_string(), v.clone());
        }
    }
    for s in &common.set {
        let (k, v) = parse_override(s)?;
        pairs.insert(k, v);
    }
    RunConfig::from_pairs(&pairs)
}

fn need_diffusion(cfg: &RunConfig) -> Result<()> {
    if cfg.data.diffusion.as_os_str().is_empty() {
        return Err(Error::config("diffusion", "pass --diffusion or set it in the config"));
    }
    Ok(())
}

fn parse_stage(s: &str) -> Result<Stage> {
    Stage::parse(s).ok_or_else(|| Error::config("stage", format!("`{s}` is not pop or con")))
}

fn toygen(scenario: u8, seed: u64, out: &Path) -> Result<()> {
    let toy = generate_toy(&ToyScenario::new(scenario, seed)).stage("toygen")?;
    write_store(out, &toy.store).stage("toygen")?;
    write_assignment(&out.join("assignment.csv"), &toy.store, &toy.assignment).stage("toygen")?;
    println!("{} cascades, {} events -> {}", toy.store.num_cascades(), toy.store.diffusion().len(), out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Toygen { scenario, seed, out } => toygen(scenario, seed, &out),
        Command::Split { common, mode, window, scope, ratios, observe, horizon, seed, out } => {
            let cfg = resolve(
                &common,
                &[
                    ("mode", &mode),
                    ("window", &window),
                    ("scope", &scope),
                    ("ratios", &ratios),
                    ("observe", &observe),
                    ("horizon", &horizon),
                    ("split_seed", &seed),
                ],
            )
            .stage("config")?;
            need_diffusion(&cfg).stage("config")?;
            let store = load_events(&cfg.data).stage("load")?;
            let tasks = make_tasks(&store, &cfg.split).stage("split")?;
            write_manifest(&out, &store, &tasks).stage("split")?;
            let c = pipeline::TaskCounts::of(&tasks);
            println!("{} tasks (train {}, val {}, test {}) -> {}", tasks.len(), c.train, c.val, c.test, out.display());
            Ok(())
        }
        Command::Precompute { what: PrecomputeCommand::Compgraph { common, tau1, similarity, cutoff, out } } => {
            let cfg = resolve(&common, &[("tau1", &tau1)]).stage("config")?;
            need_diffusion(&cfg).stage("config")?;
            let kind = SimilarityKind::parse(&similarity)
                .ok_or_else(|| Error::config("similarity", format!("`{similarity}` is not jaccard or cosine")))
                .stage("config")?;
            let store = load_events(&cfg.data).stage("load")?;
            let graph = build_competition_graph(&store, cutoff, cfg.model.tau1, kind).stage("compgraph")?;
            write_compgraph(&out, &graph, cutoff).stage("compgraph")?;
            println!("{} cascades, {} edges -> {}", graph.num_cascades(), graph.num_edges(), out.display());
            Ok(())
        }
        Command::Precompute { what: PrecomputeCommand::Sequences { common, tasks, lmax, tau2, tau3, seed, ablate, out } } => {
            let cfg = resolve(&common, &[("lmax", &lmax), ("tau2", &tau2), ("tau3", &tau3), ("walk_seed", &seed), ("ablate", &ablate)])
                .stage("config")?;
            need_diffusion(&cfg).stage("config")?;
            let store = load_events(&cfg.data).stage("load")?;
            let tasks = read_manifest(&tasks, &store).stage("load")?;
            let mcfg = model_config(&cfg.model, &store);
            let pre = pipeline::prepare(&store, &tasks, &mcfg).stage("sequences")?;
            let records: Vec<SequenceRecord> = pre.inputs.iter().map(SequenceRecord::of).collect();
            write_sequences(&out, &records).stage("sequences")?;
            println!("{} task records -> {}", records.len(), out.display());
            Ok(())
        }
        Command::Train { common, tasks, stage, init, sequences, epochs, lr, batch, seed, ablate, out } => {
            let cfg = resolve(&common, &[("epochs", &epochs), ("lr", &lr), ("batch", &batch), ("seed", &seed), ("ablate", &ablate)])
                .stage("config")?;
            need_diffusion(&cfg).stage("config")?;
            let stage = parse_stage(&stage).stage("config")?;
            let store = load_events(&cfg.data).stage("load")?;
            let tasks = read_manifest(&tasks, &store).stage("load")?;
            let model = match (&init, stage) {
                (Some(p), _) => load_checkpoint(p).stage("load")?.0,
                (None, Stage::Popularity) => Model::new(model_config(&cfg.model, &store), cfg.train.seed).stage("train")?,
                (None, Stage::Conversion) => {
                    return Err(Error::config("init", "conversion training starts from a popularity checkpoint")).stage("config")
                }
            };
            let mut pre = pipeline::prepare(&store, &tasks, &model.config).stage("precompute")?;
            if let Some(p) = &sequences {
                let records = read_sequences(p).stage("load")?;
                apply_sequences(p, &mut pre, records).stage("load")?;
            }
            let data = Dataset { store: &store, tasks: &tasks, pre: &pre };
            let (outcome, rows) = train_logged(model, data, TrainConfig { stage, ..cfg.train }).stage("train")?;
            let tag = stage.as_str();
            write_epoch_log(&out.join(format!("epochs_{tag}.csv")), &rows).stage("train")?;
            let ckpt = out.join(format!("checkpoint_{tag}.ckpt"));
            save_checkpoint(&ckpt, &outcome.model, tag, outcome.best_epoch).stage("train")?;
            println!("best epoch {} -> {}", outcome.best_epoch, ckpt.display());
            Ok(())
        }
        Command::Evaluate { common, tasks, checkpoint, split, stage, out, predictions } => {
            let cfg = resolve(&common, &[]).stage("config")?;
            need_diffusion(&cfg).stage("config")?;
            let stage = parse_stage(&stage).stage("config")?;
            let split = SplitKind::parse(&split)
                .ok_or_else(|| Error::config("split", format!("`{split}` is not train, val or test")))
                .stage("config")?;
            let store = load_events(&cfg.data).stage("load")?;
            let tasks = read_manifest(&tasks, &store).stage("load")?;
            let (model, _) = load_checkpoint(&checkpoint).stage("load")?;
            let pre = pipeline::prepare(&store, &tasks, &model.config).stage("precompute")?;
            let data = Dataset { store: &store, tasks: &tasks, pre: &pre };
            let eval = evaluate(&model, &data, split, stage, cfg.train.batch_size, cfg.train.norm).stage("evaluate")?;
            write_json(&out, &eval.report).stage("evaluate")?;
            if let Some(p) = &predictions {
                write_jsonl(p, prediction_rows(&store, &tasks, &eval.predictions)).stage("evaluate")?;
            }
            println!("{}", serde_json::to_string(&eval.report).unwrap_or_default());
            Ok(())
        }
        Command::Audit { seed, epochs, out } => {
            let cfg = AuditConfig { seed, train: TrainConfig { epochs, ..TrainConfig::default() }, ..AuditConfig::default() };
            let report = leakage_audit(&cfg).stage("audit")?;
            println!("{:<15} {:>8} {:>10} {:>10}", "split", "scenario", "msle", "male");
            for c in &report.cells {
                println!("{:<15} {:>8} {:>10.4} {:>10.4}", c.split.as_str(), c.scenario, c.test.msle, c.test.male);
            }
            println!("cascade-random S2/S1 = {:.3} ({})", report.random_ratio, verdict(report.random_verdict));
            println!("time-ordered   S1/S2 = {:.3} ({})", report.time_ordered_ratio, verdict(report.time_ordered_verdict));
            if let Some(p) = &out {
                write_json(p, &report).stage("audit")?;
            }
            Ok(())
        }
        Command::Bench { common, cascades, events, window, out } => {
            let cfg = resolve(&common, &[]).stage("config")?;
            let store = if cfg.data.diffusion.as_os_str().is_empty() {
                random_store(&RandomStoreConfig { cascades, events, ..RandomStoreConfig::default() }).stage("load")?
            } else {
                load_events(&cfg.data).stage("load")?
            };
            let window = match &window {
                Some(w) => castemp::config::parse_duration(w)
                    .ok_or_else(|| Error::config("window", format!("`{w}` is not a duration")))
                    .stage("config")?,
                None => toy_window(&store),
            };
            let tasks = if store.diffusion().is_empty() { Vec::new() } else { make_time_ordered_split(&store, window).stage("split")? };
            let report = bench_precompute(&store, &tasks, &cfg.model, &cfg.train).stage("bench")?;
            println!("{}", serde_json::to_string_pretty(&report).unwrap_or_default());
            if let Some(p) = &out {
                write_json(p, &report).stage("bench")?;
            }
            Ok(())
        }
        Command::Run { common, out } => {
            let cfg = resolve(&common, &[]).stage("config")?;
            let run = pipeline::run_pipeline(&cfg, &out)?;
            for s in &run.manifest.stages {
                println!("{:<12} {:<32} {:.2}s", s.stage, s.status, s.seconds);
            }
            let m = &run.metrics.popularity;
            println!("{} popularity: msle {:.4} male {:.4} hit40 {:.4}", m.split, m.msle, m.male, m.hit40);
            if let Some(m) = &run.metrics.conversion {
                println!("{} conversion: msle {:.4} male {:.4} hit40 {:.4}", m.split, m.msle, m.male, m.hit40);
            }
            Ok(())
        }
    }
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "holds"
    } else {
        "does not hold"
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("castemp: {e}");
            ExitCode::FAILURE
        }
    }
}
