use castemp_core::math::ln_1p;
use castemp_core::model::{is_con_param, Model, ModelConfig};
use castemp_core::precompute::{precompute, PrecomputeConfig, Precomputed};
use castemp_core::splitter::{make_cascade_random_split, PredictionTask, SplitKind, SplitRatios};
use castemp_core::store::CascadeStore;
use castemp_core::synth::{planted_growth_store, PlantedConfig};
use castemp_core::trainer::{evaluate, split_msle, train, Dataset, NormMode, Stage, TrainConfig};
use castemp_core::Error;

struct Fixture {
    store: CascadeStore,
    tasks: Vec<PredictionTask>,
    pre: Precomputed,
    cfg: ModelConfig,
}

impl Fixture {
    fn new(planted: PlantedConfig) -> Self {
        let store = planted_growth_store(&planted).unwrap();
        let ratios = SplitRatios::new(0.7, 0.15, 0.15).unwrap();
        let tasks = make_cascade_random_split(&store, ratios, 1.0, 1.0, planted.seed).unwrap();
        let cfg = ModelConfig::for_store(&store);
        let pre = precompute(&store, &tasks, &PrecomputeConfig::for_model(&cfg)).unwrap();
        Fixture { store, tasks, pre, cfg }
    }

    fn data(&self) -> Dataset<'_> {
        Dataset { store: &self.store, tasks: &self.tasks, pre: &self.pre }
    }
}

fn small() -> Fixture {
    Fixture::new(PlantedConfig { cascades: 60, conversions_per_event: 1, seed: 4, ..PlantedConfig::default() })
}

#[test]
fn same_seed_gives_identical_runs() {
    let f = small();
    let cfg = TrainConfig { epochs: 4, seed: 9, ..TrainConfig::default() };
    let a = train(Model::new(f.cfg, 1).unwrap(), f.data(), cfg).unwrap();
    let b = train(Model::new(f.cfg, 1).unwrap(), f.data(), cfg).unwrap();
    assert_eq!(a.model.params, b.model.params);
    assert_eq!(a.logs, b.logs);
    let c = train(Model::new(f.cfg, 1).unwrap(), f.data(), TrainConfig { seed: 10, ..cfg }).unwrap();
    assert_ne!(a.logs, c.logs);
}

#[test]
fn zero_learning_rate_keeps_parameters() {
    let f = small();
    let m = Model::new(f.cfg, 2).unwrap();
    let out = train(m.clone(), f.data(), TrainConfig { epochs: 3, learning_rate: 0.0, ..TrainConfig::default() }).unwrap();
    assert_eq!(out.model.params, m.params);
    assert_eq!(out.logs.len(), 3);
}

#[test]
fn planted_signal_halves_train_msle() {
    let f = Fixture::new(PlantedConfig { seed: 1, ..PlantedConfig::default() });
    let data = f.data();
    let train_idx = data.split_indices(SplitKind::Train);
    let m = Model::new(f.cfg, 1).unwrap();
    let before = split_msle(&m, &data, &train_idx, Stage::Popularity, 64, NormMode::Batch).unwrap();
    let out = train(m, data, TrainConfig { seed: 1, ..TrainConfig::default() }).unwrap();
    let after = split_msle(&out.model, &data, &train_idx, Stage::Popularity, 64, NormMode::Batch).unwrap();
    assert!(after <= 0.5 * before, "{before} -> {after}");
    let best = out.logs.iter().map(|l| l.val_msle.unwrap()).fold(f64::INFINITY, f64::min);
    assert_eq!(out.logs[out.best_epoch - 1].val_msle.unwrap(), best);
}

#[test]
fn conversion_stage_touches_only_the_conversion_head() {
    let f = small();
    let s1 = train(Model::new(f.cfg, 3).unwrap(), f.data(), TrainConfig { epochs: 3, ..TrainConfig::default() }).unwrap();
    let frozen = s1.model.params.fingerprint(|n| !is_con_param(n));
    let head = s1.model.params.fingerprint(is_con_param);
    let s2 = train(s1.model, f.data(), TrainConfig { epochs: 3, stage: Stage::Conversion, ..TrainConfig::default() }).unwrap();
    assert_eq!(s2.model.params.fingerprint(|n| !is_con_param(n)), frozen);
    assert_ne!(s2.model.params.fingerprint(is_con_param), head);
}

#[test]
fn missing_precompute_names_the_task() {
    let f = small();
    let bare = PrecomputeConfig { build_graph: false, ..PrecomputeConfig::for_model(&f.cfg) };
    let pre = precompute(&f.store, &f.tasks, &bare).unwrap();
    let data = Dataset { store: &f.store, tasks: &f.tasks, pre: &pre };
    let err = train(Model::new(f.cfg, 0).unwrap(), data, TrainConfig::default()).unwrap_err();
    assert_eq!(err, Error::MissingPrecompute(0));
}

#[test]
fn injected_constant_outputs_give_closed_form_metrics() {
    // one observed event and no noise: every label is exactly 3
    let f = Fixture::new(PlantedConfig { cascades: 40, max_observed: 1, noise: 0, seed: 2, ..PlantedConfig::default() });
    let data = f.data();
    assert!(f.tasks.iter().all(|t| t.popularity_label == 3));
    let mut m = Model::uninitialized(f.cfg).unwrap();
    m.set_output_bias(false, 3.0);
    let ev = evaluate(&m, &data, SplitKind::Test, Stage::Popularity, 64, NormMode::Batch).unwrap();
    assert!(ev.report.msle < 1e-20 && ev.report.male < 1e-10);
    assert_eq!(ev.report.hit40, 1.0);

    let b3 = m.ids.pop.b3;
    m.params.get_mut(b3).data[0] = -60.0;
    let ev = evaluate(&m, &data, SplitKind::Test, Stage::Popularity, 64, NormMode::Batch).unwrap();
    assert_eq!(ev.report.hit40, 0.0);
    assert!((ev.report.msle - ln_1p(3.0).powi(2)).abs() < 1e-12);
}

#[test]
fn evaluation_matches_scalar_recomputation() {
    let f = small();
    let data = f.data();
    let m = Model::new(f.cfg, 8).unwrap();
    for (stage, split) in [(Stage::Popularity, SplitKind::Val), (Stage::Conversion, SplitKind::Test)] {
        let ev = evaluate(&m, &data, split, stage, 7, NormMode::Batch).unwrap();
        let (mut se, mut ae, mut hits) = (0.0, 0.0, 0usize);
        for p in &ev.predictions {
            let (y_hat, y) = match stage {
                Stage::Popularity => (p.y_pop, p.popularity_label as f64),
                Stage::Conversion => (p.y_con, p.conversion_label as f64),
            };
            let d = (1.0 + y_hat).ln() - (1.0 + y).ln();
            se += d * d;
            ae += d.abs();
            hits += usize::from((y_hat - y).abs() / y.max(1.0) < 0.4);
        }
        let n = ev.predictions.len() as f64;
        assert_eq!(ev.report.n_tasks, ev.predictions.len());
        assert!((ev.report.msle - se / n).abs() < 1e-12);
        assert!((ev.report.male - ae / n).abs() < 1e-12);
        assert_eq!(ev.report.hit40, hits as f64 / n);
    }
}

#[test]
fn empty_split_is_an_error() {
    let f = small();
    let only_train: Vec<PredictionTask> = f.tasks.iter().filter(|t| t.split == SplitKind::Train).cloned().collect();
    let pre = precompute(&f.store, &only_train, &PrecomputeConfig::for_model(&f.cfg)).unwrap();
    let data = Dataset { store: &f.store, tasks: &only_train, pre: &pre };
    let m = Model::new(f.cfg, 0).unwrap();
    assert_eq!(evaluate(&m, &data, SplitKind::Test, Stage::Popularity, 64, NormMode::Batch).unwrap_err(), Error::EmptySplit("test"));
    // no validation tasks: best checkpoint falls back to training MSLE
    let out = train(m, data, TrainConfig { epochs: 2, ..TrainConfig::default() }).unwrap();
    assert!(out.logs.iter().all(|l| l.val_msle.is_none()));
    assert!((1..=2).contains(&out.best_epoch));
}
