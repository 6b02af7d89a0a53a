//! Auxiliary features, feature assembly and the two Softplus prediction heads.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::params::{Init, ParamId, ParamStore};
use crate::store::{CascadeId, CascadeStore, EventStream, Interval};
use crate::tape::{Tape, Var};

pub const HIS_BINS: usize = 4;
pub const HIS_LEN: usize = HIS_BINS + 1;

/// Leak-free summary features of one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuxiliaryFeatures {
    pub his_pop: [f64; HIS_LEN],
    pub his_con: [f64; HIS_LEN],
}

fn bin_counts(times: impl Iterator<Item = f64>, start: f64, end: f64) -> [f64; HIS_LEN] {
    let mut counts = [0u32; HIS_BINS];
    let width = (end - start) / HIS_BINS as f64;
    for t in times {
        if t < start || t > end {
            continue;
        }
        let k = if width > 0.0 { (math::ceil((t - start) / width) as i64 - 1).clamp(0, HIS_BINS as i64 - 1) as usize } else { 0 };
        counts[k] += 1;
    }
    let total: u32 = counts.iter().sum();
    let mut out = [0.0; HIS_LEN];
    for (o, c) in out.iter_mut().zip(counts) {
        *o = math::ln_1p(c as f64);
    }
    out[HIS_BINS] = math::ln_1p(total as f64);
    out
}

/// `log1p` counts of diffusion (`his_pop`) and conversion (`his_con`) events
/// in four equal sub-bins of `[start, cutoff]` plus the total, where `start` is
/// the first observed diffusion time.
pub fn auxiliary_features(store: &CascadeStore, cascade: CascadeId, observed: Interval) -> Result<AuxiliaryFeatures> {
    let events = store.cascade_events(cascade)?;
    let times = || events.iter().map(|&e| store.diffusion()[e as usize].time).filter(|&t| observed.contains(t));
    let Some(start) = times().next() else {
        return Ok(AuxiliaryFeatures { his_pop: [0.0; HIS_LEN], his_con: [0.0; HIS_LEN] });
    };
    let end = observed.end;
    let conv = store.cascade_conversions(cascade)?;
    let conv_times = conv.iter().map(|&e| store.conversions()[e as usize].time).filter(|&t| observed.contains(t));
    Ok(AuxiliaryFeatures { his_pop: bin_counts(times(), start, end), his_con: bin_counts(conv_times, start, end) })
}

/// Raw counts per stream, used by tests as an independent check.
pub fn observed_total(store: &CascadeStore, cascade: CascadeId, observed: Interval, stream: EventStream) -> Result<u32> {
    store.count_in(cascade, observed, stream)
}

/// How the first-stage prediction enters the conversion features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ForwardScaling {
    #[default]
    Log1p,
    Raw,
}

impl ForwardScaling {
    pub fn apply(self, y: f64) -> f64 {
        match self {
            ForwardScaling::Log1p => math::ln_1p(y),
            ForwardScaling::Raw => y,
        }
    }
}

fn check_len(what: &'static str, v: &[f64], expected: usize) -> Result<()> {
    if v.len() == expected {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { what, expected, actual: v.len() })
    }
}

/// `[z_comp; s_self; s_cross; his_pop; fused]`.
pub fn assemble_pop_features(
    z_comp: &[f64],
    s_self: &[f64],
    s_cross: &[f64],
    his_pop: &[f64],
    fused: &[f64],
    d_h: usize,
) -> Result<Vec<f64>> {
    check_len("z_comp", z_comp, d_h)?;
    check_len("s_self", s_self, d_h)?;
    check_len("s_cross", s_cross, d_h)?;
    check_len("his_pop", his_pop, HIS_LEN)?;
    check_len("fused", fused, d_h)?;
    Ok([z_comp, s_self, s_cross, his_pop, fused].concat())
}

/// `[z_comp; s_self; s_cross; his_con; fused; y_forward]`.
pub fn assemble_con_features(
    z_comp: &[f64],
    s_self: &[f64],
    s_cross: &[f64],
    his_con: &[f64],
    fused: &[f64],
    y_forward: f64,
    d_h: usize,
) -> Result<Vec<f64>> {
    let mut f = assemble_pop_features(z_comp, s_self, s_cross, his_con, fused, d_h)?;
    f.push(y_forward);
    Ok(f)
}

pub fn pop_feature_len(d_h: usize) -> usize {
    4 * d_h + HIS_LEN
}

pub fn con_feature_len(d_h: usize) -> usize {
    pop_feature_len(d_h) + 1
}

/// Linear(d_h) -> ReLU -> Linear(d_h) -> ReLU -> Linear(1) -> Softplus.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeadIds {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    pub w3: ParamId,
    pub b3: ParamId,
}

impl HeadIds {
    pub fn register(store: &mut ParamStore, prefix: &str, d_in: usize, d_h: usize) -> Self {
        let mut m = |n: &str, r, c, init| store.add(&format!("{prefix}.{n}"), r, c, init);
        HeadIds {
            w1: m("w1", d_h, d_in, Init::Fan),
            b1: m("b1", d_h, 1, Init::Zeros),
            w2: m("w2", d_h, d_h, Init::Fan),
            b2: m("b2", d_h, 1, Init::Zeros),
            w3: m("w3", 1, d_h, Init::Fan),
            b3: m("b3", 1, 1, Init::Zeros),
        }
    }

    pub fn forward(&self, t: &mut Tape, f: Var) -> Var {
        let a1 = t.affine(self.w1, self.b1, f);
        let h1 = t.relu(a1);
        let a2 = t.affine(self.w2, self.b2, h1);
        let h2 = t.relu(a2);
        let a3 = t.affine(self.w3, self.b3, h2);
        t.softplus(a3)
    }

    /// Head output for a plain feature vector.
    pub fn predict(&self, params: &ParamStore, f: &[f64]) -> Result<f64> {
        let w1 = params.get(self.w1);
        if w1.cols != f.len() {
            return Err(Error::DimensionMismatch { what: "head input", expected: w1.cols, actual: f.len() });
        }
        let frozen = alloc::vec![false; params.len()];
        let mut t = Tape::new(params, &frozen);
        let x = t.constant(f);
        let y = self.forward(&mut t, x);
        Ok(t.scalar(y))
    }
}

/// `ReLU(W_f s + b_f)` over static cascade attributes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FusionIds {
    pub w: ParamId,
    pub b: ParamId,
}

impl FusionIds {
    pub fn register(store: &mut ParamStore, d_s: usize, d_h: usize) -> Self {
        FusionIds { w: store.add("fuse.w", d_h, d_s, Init::Fan), b: store.add("fuse.b", d_h, 1, Init::Zeros) }
    }

    pub fn forward(&self, t: &mut Tape, statics: &[f64]) -> Var {
        let x = t.constant(statics);
        let a = t.affine(self.w, self.b, x);
        t.relu(a)
    }
}
