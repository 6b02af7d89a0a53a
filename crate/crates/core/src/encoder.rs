//! Time encoding, promoter feature transform, temporal decay, the recurrent
//! sequence encoder with decay-fused attention, and the graph-attention
//! competition encoder.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::params::{Init, ParamId, ParamStore, Tensor};
use crate::tape::{Tape, Var};

pub const TIME_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum DecayKind {
    #[default]
    Exponential,
    Linear,
    None,
}

impl DecayKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DecayKind::Exponential => "exponential",
            DecayKind::Linear => "linear",
            DecayKind::None => "none",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "exponential" | "exp" => Some(DecayKind::Exponential),
            "linear" => Some(DecayKind::Linear),
            "none" => Some(DecayKind::None),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GatConfig {
    pub heads: usize,
    pub leaky_slope: f64,
    pub self_loops: bool,
}

impl Default for GatConfig {
    fn default() -> Self {
        GatConfig { heads: 1, leaky_slope: 0.2, self_loops: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub d_n: usize,
    pub d_h: usize,
    pub d_t: usize,
    pub d_a: usize,
    pub lambda: f64,
    /// Raw time units per decay unit: `Δ = (t_max - t_k) / decay_unit`.
    pub decay_unit: f64,
    pub bidirectional: bool,
    pub decay_kind: DecayKind,
    pub gat: GatConfig,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            d_n: 0,
            d_h: 16,
            d_t: 16,
            d_a: 16,
            lambda: 0.1,
            decay_unit: 1.0,
            bidirectional: false,
            decay_kind: DecayKind::Exponential,
            gat: GatConfig::default(),
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |name, reason: &str| Err(Error::InvalidParameter { name, reason: reason.into() });
        if self.d_t == 0 || self.d_t % 2 != 0 {
            return bad("d_t", "must be even and at least 2");
        }
        if self.d_h == 0 || self.d_a == 0 {
            return bad("d_h/d_a", "must be at least 1");
        }
        if !(self.lambda > 0.0) {
            return bad("lambda", "must be positive");
        }
        if !(self.decay_unit > 0.0) {
            return bad("decay_unit", "must be positive");
        }
        if self.gat.heads != 1 {
            return bad("gat.heads", "only a single head is supported");
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.d_h + self.d_t
    }
}

/// Min/max of a batch's real timestamps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeNorm {
    pub min: f64,
    pub max: f64,
}

impl TimeNorm {
    pub fn from_times(times: impl IntoIterator<Item = f64>) -> Option<Self> {
        let mut it = times.into_iter();
        let first = it.next()?;
        let (min, max) = it.fold((first, first), |(lo, hi), t| (lo.min(t), hi.max(t)));
        Some(TimeNorm { min, max })
    }

    pub fn apply(&self, t: f64) -> f64 {
        (t - self.min) / (self.max - self.min + TIME_EPS)
    }
}

pub fn normalize_times(times: &[f64]) -> Result<Vec<f64>> {
    let norm = TimeNorm::from_times(times.iter().copied()).ok_or(Error::EmptyInput { what: "times" })?;
    Ok(times.iter().map(|&t| norm.apply(t)).collect())
}

pub fn frequency(j: usize, d_t: usize) -> f64 {
    let h = d_t / 2;
    if h <= 1 {
        return 1.0;
    }
    math::powf(10000.0, -2.0 * j as f64 / (h as f64 - 1.0))
}

pub fn time_encode_into(t: f64, out: &mut [f64]) {
    let d_t = out.len();
    let m = d_t / 4;
    out.iter_mut().for_each(|v| *v = 0.0);
    for j in 0..m {
        let arg = t * frequency(j, d_t);
        out[2 * j] = math::sin(arg);
        out[2 * j + 1] = math::cos(arg);
    }
}

pub fn time_encode(t: f64, d_t: usize) -> Vec<f64> {
    let mut out = alloc::vec![0.0; d_t];
    time_encode_into(t, &mut out);
    out
}

/// `ReLU(W_t n_u + b_t)` on plain tensors.
pub fn transform_features(n_u: &[f64], w_t: &Tensor, b_t: &Tensor) -> Result<Vec<f64>> {
    if w_t.cols != n_u.len() {
        return Err(Error::DimensionMismatch { what: "promoter features", expected: w_t.cols, actual: n_u.len() });
    }
    if b_t.len() != w_t.rows {
        return Err(Error::DimensionMismatch { what: "feature bias", expected: w_t.rows, actual: b_t.len() });
    }
    Ok((0..w_t.rows)
        .map(|r| {
            let s: f64 = (0..w_t.cols).map(|c| w_t.at(r, c) * n_u[c]).sum::<f64>() + b_t.data[r];
            s.max(0.0)
        })
        .collect())
}

/// Decay weight of a single event `delta` units before `t_max`.
pub fn decay_weight(delta: f64, lambda: f64, kind: DecayKind) -> f64 {
    match kind {
        DecayKind::Exponential => math::exp(-lambda * delta),
        DecayKind::Linear => (1.0 - lambda * delta).max(0.0),
        DecayKind::None => 1.0,
    }
}

/// `log α`, or `None` when `α = 0`.
pub fn log_decay_weight(delta: f64, lambda: f64, kind: DecayKind) -> Option<f64> {
    match kind {
        DecayKind::Exponential => Some(-lambda * delta),
        DecayKind::Linear => {
            let a = 1.0 - lambda * delta;
            (a > 0.0).then(|| math::ln(a))
        }
        DecayKind::None => Some(0.0),
    }
}

pub fn decay_weights(times: &[f64], t_max: f64, lambda: f64, kind: DecayKind) -> Vec<f64> {
    times.iter().map(|&t| decay_weight(t_max - t, lambda, kind)).collect()
}

/// Softmax over `logits + log α`, with `None` entries excluded (weight 0).
pub fn attention_weights(logits: &[f64], log_alpha: &[Option<f64>]) -> Vec<f64> {
    let fused: Vec<f64> =
        logits.iter().zip(log_alpha).map(|(l, a)| a.map_or(f64::NEG_INFINITY, |a| l + a)).collect();
    let max = fused.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return alloc::vec![0.0; logits.len()];
    }
    let exps: Vec<f64> = fused.iter().map(|&f| if f == f64::NEG_INFINITY { 0.0 } else { math::exp(f - max) }).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GruIds {
    pub w_z: ParamId,
    pub u_z: ParamId,
    pub b_z: ParamId,
    pub w_r: ParamId,
    pub u_r: ParamId,
    pub b_r: ParamId,
    pub w_n: ParamId,
    pub u_n: ParamId,
    pub b_n: ParamId,
    pub b_hn: ParamId,
}

impl GruIds {
    pub fn register(store: &mut ParamStore, prefix: &str, d_x: usize, d_h: usize) -> Self {
        let mut m = |n: &str, r, c, init| store.add(&format!("{prefix}.{n}"), r, c, init);
        GruIds {
            w_z: m("w_z", d_h, d_x, Init::Fan),
            u_z: m("u_z", d_h, d_h, Init::Fan),
            b_z: m("b_z", d_h, 1, Init::Zeros),
            w_r: m("w_r", d_h, d_x, Init::Fan),
            u_r: m("u_r", d_h, d_h, Init::Fan),
            b_r: m("b_r", d_h, 1, Init::Zeros),
            w_n: m("w_n", d_h, d_x, Init::Fan),
            u_n: m("u_n", d_h, d_h, Init::Fan),
            b_n: m("b_n", d_h, 1, Init::Zeros),
            b_hn: m("b_hn", d_h, 1, Init::Zeros),
        }
    }

    pub fn step(&self, t: &mut Tape, x: Var, h: Var) -> Var {
        let zx = t.affine(self.w_z, self.b_z, x);
        let zh = t.matvec(self.u_z, h);
        let zs = t.add(zx, zh);
        let z = t.sigmoid(zs);
        let rx = t.affine(self.w_r, self.b_r, x);
        let rh = t.matvec(self.u_r, h);
        let rs = t.add(rx, rh);
        let r = t.sigmoid(rs);
        let nx = t.affine(self.w_n, self.b_n, x);
        let nh = t.affine(self.u_n, self.b_hn, h);
        let rn = t.mul(r, nh);
        let ns = t.add(nx, rn);
        let n = t.tanh(ns);
        let keep = t.one_minus(z);
        let a = t.mul(keep, n);
        let b = t.mul(z, h);
        t.add(a, b)
    }
}

/// One recurrent-attention encoder (separate instances for self and cross
/// sequences).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeqEncoderIds {
    pub fwd: GruIds,
    pub bwd: Option<(GruIds, ParamId, ParamId)>,
    pub w_a: ParamId,
    pub v: ParamId,
    pub empty: ParamId,
}

impl SeqEncoderIds {
    pub fn register(store: &mut ParamStore, prefix: &str, cfg: &EncoderConfig) -> Self {
        let d_x = cfg.input_dim();
        let fwd = GruIds::register(store, &format!("{prefix}.gru"), d_x, cfg.d_h);
        let bwd = cfg.bidirectional.then(|| {
            let g = GruIds::register(store, &format!("{prefix}.gru_bwd"), d_x, cfg.d_h);
            let pw = store.add(&format!("{prefix}.proj.w"), cfg.d_h, 2 * cfg.d_h, Init::Fan);
            let pb = store.add(&format!("{prefix}.proj.b"), cfg.d_h, 1, Init::Zeros);
            (g, pw, pb)
        });
        SeqEncoderIds {
            fwd,
            bwd,
            w_a: store.add(&format!("{prefix}.att.w_a"), cfg.d_a, cfg.d_h, Init::Fan),
            v: store.add(&format!("{prefix}.att.v"), cfg.d_a, 1, Init::Fan),
            empty: store.add(&format!("{prefix}.empty"), cfg.d_h, 1, Init::Fan),
        }
    }
}

/// Shared promoter feature transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureTransformIds {
    pub w_t: ParamId,
    pub b_t: ParamId,
}

impl FeatureTransformIds {
    pub fn register(store: &mut ParamStore, cfg: &EncoderConfig) -> Self {
        FeatureTransformIds {
            w_t: store.add("enc.w_t", cfg.d_h, cfg.d_n, Init::Fan),
            b_t: store.add("enc.b_t", cfg.d_h, 1, Init::Fan),
        }
    }
}

/// One real entry of a sequence, prepared outside the tape.
#[derive(Debug, Clone, Copy)]
pub struct Step<'a> {
    pub features: &'a [f64],
    pub t_norm: f64,
    pub alpha: f64,
    pub log_alpha: Option<f64>,
}

/// Builds the steps of a sequence's real entries.
pub fn prepare_steps<'a>(
    entries: impl Iterator<Item = (&'a [f64], f64)>,
    norm: &TimeNorm,
    t_max: f64,
    cfg: &EncoderConfig,
) -> Vec<Step<'a>> {
    entries
        .map(|(features, t)| {
            let delta = (t_max - t) / cfg.decay_unit;
            Step {
                features,
                t_norm: norm.apply(t),
                alpha: decay_weight(delta, cfg.lambda, cfg.decay_kind),
                log_alpha: log_decay_weight(delta, cfg.lambda, cfg.decay_kind),
            }
        })
        .collect()
}

/// Attention pooling over hidden states; returns the pooled vector and the
/// attention-weight node.
pub fn attend(t: &mut Tape, enc: &SeqEncoderIds, states: &[Var], log_alpha: &[Option<f64>]) -> Option<(Var, Var)> {
    let mut logits = Vec::with_capacity(states.len());
    let mut kept = Vec::with_capacity(states.len());
    let mut offsets = Vec::with_capacity(states.len());
    let v = t.param(enc.v);
    for (&h, la) in states.iter().zip(log_alpha) {
        let Some(la) = la else { continue };
        let wa = t.matvec(enc.w_a, h);
        let th = t.tanh(wa);
        logits.push(t.dot(v, th));
        kept.push(h);
        offsets.push(*la);
    }
    if kept.is_empty() {
        return None;
    }
    let raw = t.concat(&logits);
    let bias = t.constant(&offsets);
    let fused = t.add(raw, bias);
    let weights = t.softmax(fused);
    Some((t.weighted_sum(weights, &kept), weights))
}

/// Encodes a prepared sequence. Sequences without any usable entry map to the
/// encoder's learned empty vector.
pub fn encode_steps(t: &mut Tape, ft: &FeatureTransformIds, enc: &SeqEncoderIds, cfg: &EncoderConfig, steps: &[Step]) -> Var {
    if steps.is_empty() {
        return t.param(enc.empty);
    }
    let mut te = alloc::vec![0.0; cfg.d_t];
    let inputs: Vec<Var> = steps
        .iter()
        .map(|s| {
            let n = t.constant(s.features);
            let a = t.affine(ft.w_t, ft.b_t, n);
            let f = t.relu(a);
            time_encode_into(s.t_norm, &mut te);
            let tv = t.constant(&te);
            let x = t.concat(&[f, tv]);
            if s.alpha == 1.0 {
                x
            } else {
                t.scale(x, s.alpha)
            }
        })
        .collect();
    let h0 = t.zeros(cfg.d_h);
    let mut states = Vec::with_capacity(inputs.len());
    let mut h = h0;
    for &x in &inputs {
        h = enc.fwd.step(t, x, h);
        states.push(h);
    }
    if let Some((bwd, pw, pb)) = enc.bwd {
        let mut back = alloc::vec![h0; inputs.len()];
        let mut hb = h0;
        for (k, &x) in inputs.iter().enumerate().rev() {
            hb = bwd.step(t, x, hb);
            back[k] = hb;
        }
        for (s, b) in states.iter_mut().zip(back) {
            let c = t.concat(&[*s, b]);
            *s = t.affine(pw, pb, c);
        }
    }
    let log_alpha: Vec<Option<f64>> = steps.iter().map(|s| s.log_alpha).collect();
    match attend(t, enc, &states, &log_alpha) {
        Some((pooled, _)) => pooled,
        None => t.param(enc.empty),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GatIds {
    pub w: ParamId,
    pub b: ParamId,
    pub a_src: ParamId,
    pub a_dst: ParamId,
}

impl GatIds {
    pub fn register(store: &mut ParamStore, d_in: usize, d_h: usize) -> Self {
        GatIds {
            w: store.add("gat.w", d_h, d_in, Init::Fan),
            b: store.add("gat.b", d_h, 1, Init::Zeros),
            a_src: store.add("gat.a_src", d_h, 1, Init::Fan),
            a_dst: store.add("gat.a_dst", d_h, 1, Init::Fan),
        }
    }
}

/// Graph attention for one node: `z_i = sum_j beta_ij W x_j + b` over the
/// neighbourhood (plus the self loop), with logits
/// `w_ij * LeakyReLU(a_src . W x_i + a_dst . W x_j)`.
pub fn gat_node(t: &mut Tape, gat: &GatIds, cfg: &GatConfig, own: &[f64], neighbors: &[(&[f64], f64)]) -> (Var, Option<Var>) {
    let xi = t.constant(own);
    let wi = t.matvec(gat.w, xi);
    let a_src = t.param(gat.a_src);
    let a_dst = t.param(gat.a_dst);
    let si = t.dot(a_src, wi);
    let mut projected = Vec::with_capacity(neighbors.len() + 1);
    let mut logits = Vec::with_capacity(neighbors.len() + 1);
    let score = |t: &mut Tape, wj: Var, weight: f64| {
        let sj = t.dot(a_dst, wj);
        let s = t.add(si, sj);
        let l = t.leaky_relu(s, cfg.leaky_slope);
        if weight == 1.0 {
            l
        } else {
            t.scale(l, weight)
        }
    };
    if cfg.self_loops {
        logits.push(score(t, wi, 1.0));
        projected.push(wi);
    }
    for &(xj, w) in neighbors {
        let xv = t.constant(xj);
        let wj = t.matvec(gat.w, xv);
        logits.push(score(t, wj, w));
        projected.push(wj);
    }
    let b = t.param(gat.b);
    if projected.is_empty() {
        return (b, None);
    }
    let lv = t.concat(&logits);
    let beta = t.softmax(lv);
    let agg = t.weighted_sum(beta, &projected);
    (t.add(agg, b), Some(beta))
}

/// Whole-graph competition encoding with fixed parameters.
pub fn gat_encode(
    graph: &crate::compgraph::CompetitionGraph,
    features: &[Vec<f64>],
    params: &ParamStore,
    gat: &GatIds,
    cfg: &GatConfig,
) -> Result<Vec<Vec<f64>>> {
    if features.len() != graph.num_cascades() {
        return Err(Error::LengthMismatch { what: "cascade features vs graph", left: features.len(), right: graph.num_cascades() });
    }
    let frozen = alloc::vec![false; params.len()];
    let mut tape = Tape::new(params, &frozen);
    let mut out = Vec::with_capacity(features.len());
    for (i, own) in features.iter().enumerate() {
        tape.clear();
        let c = crate::store::CascadeId(i as u32);
        let neighbors: Vec<(&[f64], f64)> =
            graph.neighbors(c)?.into_iter().map(|(j, w)| (features[j.0 as usize].as_slice(), w)).collect();
        let (z, _) = gat_node(&mut tape, gat, cfg, own, &neighbors);
        out.push(tape.value(z).to_vec());
    }
    Ok(out)
}

/// Attention row of node `i` (self loop first, then neighbours in id order).
pub fn gat_attention(
    graph: &crate::compgraph::CompetitionGraph,
    features: &[Vec<f64>],
    params: &ParamStore,
    gat: &GatIds,
    cfg: &GatConfig,
    i: crate::store::CascadeId,
) -> Result<Vec<f64>> {
    let frozen = alloc::vec![false; params.len()];
    let mut tape = Tape::new(params, &frozen);
    let neighbors: Vec<(&[f64], f64)> =
        graph.neighbors(i)?.into_iter().map(|(j, w)| (features[j.0 as usize].as_slice(), w)).collect();
    let (_, beta) = gat_node(&mut tape, gat, cfg, &features[i.0 as usize], &neighbors);
    Ok(beta.map(|b| tape.value(b).to_vec()).unwrap_or_default())
}
