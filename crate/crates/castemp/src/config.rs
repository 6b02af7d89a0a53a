//! Flat `key = value` run configuration. CLI flags use the same keys and
//! override file values.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use castemp_core::encoder::DecayKind;
use castemp_core::model::{Ablation, Architecture, ModelConfig};
use castemp_core::predictor::ForwardScaling;
use castemp_core::sequences::WalkStart;
use castemp_core::splitter::{window_presets, ObservationScope, SplitKind, SplitRatios};
use castemp_core::trainer::{NormMode, TrainConfig};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::io::EventFiles;

/// Seconds in a duration string: a bare number, a number with one of the
/// suffixes `s m h d w y`, or a dataset preset (`twitter`, `weibo`, `aps`,
/// `taoke`).
pub fn parse_duration(s: &str) -> Option<f64> {
    let s = s.trim();
    if let Some(p) = window_presets::by_name(s) {
        return Some(p);
    }
    let split = s.find(|c: char| c.is_ascii_alphabetic()).unwrap_or(s.len());
    let (num, unit) = s.split_at(split);
    let v: f64 = num.trim().parse().ok()?;
    let scale = match unit.trim() {
        "" | "s" => 1.0,
        "m" | "min" => 60.0,
        "h" => 3_600.0,
        "d" => 86_400.0,
        "w" => 7.0 * 86_400.0,
        "y" => 365.0 * 86_400.0,
        _ => return None,
    };
    let d = v * scale;
    (d.is_finite() && d >= 0.0).then_some(d)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SplitModeName {
    TimeOrdered,
    CascadeRandom,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitSettings {
    pub mode: SplitModeName,
    pub window: Option<f64>,
    pub scope: ObservationScope,
    pub ratios: SplitRatios,
    pub observe: Option<f64>,
    pub horizon: Option<f64>,
    pub seed: u64,
}

impl Default for SplitSettings {
    fn default() -> Self {
        SplitSettings {
            mode: SplitModeName::TimeOrdered,
            window: None,
            scope: ObservationScope::FullPrefix,
            ratios: SplitRatios::default(),
            observe: None,
            horizon: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data: EventFiles,
    pub split: SplitSettings,
    /// Feature dimensions are taken from the store at run time.
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval_split: SplitKind,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: EventFiles::default(),
            split: SplitSettings::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            eval_split: SplitKind::Test,
        }
    }
}

/// Every recognised key, in snapshot order.
pub const KEYS: &[&str] = &[
    "diffusion",
    "conversions",
    "promoter_features",
    "cascade_features",
    "allow_self_loops",
    "mode",
    "window",
    "scope",
    "ratios",
    "observe",
    "horizon",
    "split_seed",
    "tau1",
    "lmax",
    "tau2",
    "tau3",
    "walk_start",
    "walk_seed",
    "d_h",
    "d_t",
    "d_a",
    "lambda",
    "decay_unit",
    "decay",
    "bidirectional",
    "architecture",
    "forward_scaling",
    "ablate",
    "epochs",
    "lr",
    "batch",
    "seed",
    "norm",
    "clip",
    "init_output_bias",
    "eval_split",
];

fn bad(key: &str, value: &str, expected: &str) -> Error {
    Error::config(key, format!("`{value}` is not {expected}"))
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| bad(key, v, "a number"))
}

fn flag(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(bad(key, v, "a boolean")),
    }
}

fn duration(key: &str, v: &str) -> Result<f64> {
    parse_duration(v).ok_or_else(|| bad(key, v, "a duration"))
}

fn path(v: &str) -> Option<PathBuf> {
    (!v.is_empty() && v != "none").then(|| PathBuf::from(v))
}

pub fn parse_ratios(v: &str) -> Option<SplitRatios> {
    let parts: Vec<f64> = v.split(',').map(|p| p.trim().parse().ok()).collect::<Option<_>>()?;
    match parts.as_slice() {
        [a, b, c] => SplitRatios::new(*a, *b, *c).ok(),
        _ => None,
    }
}

pub fn scope_name(s: ObservationScope) -> &'static str {
    match s {
        ObservationScope::FullPrefix => "full-prefix",
        ObservationScope::WindowOnly => "window-only",
    }
}

pub fn parse_norm(v: &str) -> Option<NormMode> {
    match v {
        "batch" => Some(NormMode::Batch),
        "global" => Some(NormMode::Global),
        _ => None,
    }
}

pub fn norm_name(n: NormMode) -> &'static str {
    match n {
        NormMode::Batch => "batch",
        NormMode::Global => "global",
    }
}

fn opt_f64(v: Option<f64>) -> String {
    v.map_or_else(|| "none".to_string(), |x| x.to_string())
}

fn opt_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map_or_else(|| "none".to_string(), |p| p.display().to_string())
}

impl RunConfig {
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let v = v.trim();
        let m = &mut self.model;
        match key {
            "diffusion" => self.data.diffusion = PathBuf::from(v),
            "conversions" => self.data.conversions = path(v),
            "promoter_features" => self.data.promoter_features = path(v),
            "cascade_features" => self.data.cascade_features = path(v),
            "allow_self_loops" => self.data.allow_self_loops = flag(key, v)?,
            "mode" => {
                self.split.mode = match v {
                    "time-ordered" => SplitModeName::TimeOrdered,
                    "cascade-random" => SplitModeName::CascadeRandom,
                    _ => return Err(bad(key, v, "time-ordered or cascade-random")),
                }
            }
            "window" => self.split.window = if v == "none" { None } else { Some(duration(key, v)?) },
            "scope" => {
                self.split.scope = match v {
                    "full-prefix" => ObservationScope::FullPrefix,
                    "window-only" => ObservationScope::WindowOnly,
                    _ => return Err(bad(key, v, "full-prefix or window-only")),
                }
            }
            "ratios" => self.split.ratios = parse_ratios(v).ok_or_else(|| bad(key, v, "three fractions summing to 1"))?,
            "observe" => self.split.observe = if v == "none" { None } else { Some(duration(key, v)?) },
            "horizon" => self.split.horizon = if v == "none" { None } else { Some(duration(key, v)?) },
            "split_seed" => self.split.seed = num(key, v)?,
            "tau1" => m.tau1 = num(key, v)?,
            "lmax" => m.lmax = num(key, v)?,
            "tau2" => m.walks.walks = num(key, v)?,
            "tau3" => m.walks.hops = num(key, v)?,
            "walk_start" => {
                m.walks.start = match v {
                    "last-target" => WalkStart::LastTarget,
                    "last-source" => WalkStart::LastSource,
                    _ => return Err(bad(key, v, "last-target or last-source")),
                }
            }
            "walk_seed" => m.walks.seed = num(key, v)?,
            "d_h" => m.encoder.d_h = num(key, v)?,
            "d_t" => m.encoder.d_t = num(key, v)?,
            "d_a" => m.encoder.d_a = num(key, v)?,
            "lambda" => m.encoder.lambda = num(key, v)?,
            "decay_unit" => m.encoder.decay_unit = duration(key, v)?,
            "decay" => m.encoder.decay_kind = DecayKind::parse(v).ok_or_else(|| bad(key, v, "exponential, linear or none"))?,
            "bidirectional" => m.encoder.bidirectional = flag(key, v)?,
            "architecture" => {
                m.architecture = match v {
                    "full" => Architecture::Full,
                    "aux-baseline" => Architecture::AuxBaseline,
                    _ => return Err(bad(key, v, "full or aux-baseline")),
                }
            }
            "forward_scaling" => {
                m.forward_scaling = match v {
                    "log1p" => ForwardScaling::Log1p,
                    "raw" => ForwardScaling::Raw,
                    _ => return Err(bad(key, v, "log1p or raw")),
                }
            }
            "ablate" => m.ablation = Ablation::parse(v).ok_or_else(|| bad(key, v, "an ablation name"))?,
            "epochs" => self.train.epochs = num(key, v)?,
            "lr" => self.train.learning_rate = num(key, v)?,
            "batch" => self.train.batch_size = num(key, v)?,
            "seed" => self.train.seed = num(key, v)?,
            "norm" => self.train.norm = parse_norm(v).ok_or_else(|| bad(key, v, "batch or global"))?,
            "clip" => self.train.clip = if v == "none" { None } else { Some(num(key, v)?) },
            "init_output_bias" => self.train.init_output_bias = flag(key, v)?,
            "eval_split" => self.eval_split = SplitKind::parse(v).ok_or_else(|| bad(key, v, "train, val or test"))?,
            _ => return Err(Error::config(key, "unknown key")),
        }
        Ok(())
    }

    /// All keys with their current values, in [`KEYS`] order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let m = &self.model;
        let mode = match self.split.mode {
            SplitModeName::TimeOrdered => "time-ordered",
            SplitModeName::CascadeRandom => "cascade-random",
        };
        let r = self.split.ratios;
        let values = [
            self.data.diffusion.display().to_string(),
            opt_path(&self.data.conversions),
            opt_path(&self.data.promoter_features),
            opt_path(&self.data.cascade_features),
            self.data.allow_self_loops.to_string(),
            mode.to_string(),
            opt_f64(self.split.window),
            scope_name(self.split.scope).to_string(),
            format!("{},{},{}", r.train, r.val, r.test),
            opt_f64(self.split.observe),
            opt_f64(self.split.horizon),
            self.split.seed.to_string(),
            m.tau1.to_string(),
            m.lmax.to_string(),
            m.walks.walks.to_string(),
            m.walks.hops.to_string(),
            match m.walks.start {
                WalkStart::LastTarget => "last-target",
                WalkStart::LastSource => "last-source",
            }
            .to_string(),
            m.walks.seed.to_string(),
            m.encoder.d_h.to_string(),
            m.encoder.d_t.to_string(),
            m.encoder.d_a.to_string(),
            m.encoder.lambda.to_string(),
            m.encoder.decay_unit.to_string(),
            m.encoder.decay_kind.as_str().to_string(),
            m.encoder.bidirectional.to_string(),
            match m.architecture {
                Architecture::Full => "full",
                Architecture::AuxBaseline => "aux-baseline",
            }
            .to_string(),
            match m.forward_scaling {
                ForwardScaling::Log1p => "log1p",
                ForwardScaling::Raw => "raw",
            }
            .to_string(),
            m.ablation.as_str().to_string(),
            self.train.epochs.to_string(),
            self.train.learning_rate.to_string(),
            self.train.batch_size.to_string(),
            self.train.seed.to_string(),
            norm_name(self.train.norm).to_string(),
            opt_f64(self.train.clip),
            self.train.init_output_bias.to_string(),
            self.eval_split.as_str().to_string(),
        ];
        KEYS.iter().copied().zip(values).collect()
    }

    pub fn to_text(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn apply(&mut self, pairs: &BTreeMap<String, String>) -> Result<()> {
        for (k, v) in pairs {
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn from_pairs(pairs: &BTreeMap<String, String>) -> Result<Self> {
        let mut c = RunConfig::default();
        c.apply(pairs)?;
        Ok(c)
    }

    /// Checks cross-key requirements once all keys are applied.
    pub fn validate(&self) -> Result<()> {
        if self.data.diffusion.as_os_str().is_empty() {
            return Err(Error::config("diffusion", "a diffusion file is required"));
        }
        match self.split.mode {
            SplitModeName::TimeOrdered if self.split.window.is_none() => {
                return Err(Error::config("window", "time-ordered splitting needs a window duration"))
            }
            SplitModeName::CascadeRandom if self.split.observe.is_none() || self.split.horizon.is_none() => {
                return Err(Error::config("observe", "cascade-random splitting needs observe and horizon"))
            }
            _ => {}
        }
        self.model.validate()?;
        self.train.validate()?;
        Ok(())
    }
}

/// Parses `key = value` lines; `#` starts a comment. Relative paths stay as
/// written.
pub fn parse_pairs(text: &str, origin: &Path) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (k, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::malformed(origin, k as u64 + 1, "expected `key = value`"))?;
        let key = key.trim();
        if !KEYS.contains(&key) {
            return Err(Error::malformed(origin, k as u64 + 1, format!("unknown key `{key}`")));
        }
        out.insert(key.to_string(), value.trim().to_string());
    }
    Ok(out)
}

pub fn read_config_file(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_pairs(&text, path)
}

/// Splits a `key=value` override.
pub fn parse_override(s: &str) -> Result<(String, String)> {
    let (k, v) = s.split_once('=').ok_or_else(|| Error::config(s, "override must look like key=value"))?;
    let k = k.trim();
    if !KEYS.contains(&k) {
        return Err(Error::config(k, "unknown key"));
    }
    Ok((k.to_string(), v.trim().to_string()))
}
