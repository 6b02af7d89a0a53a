//! Full model: parameter layout, ablation variants and the per-task forward
//! pass producing both predictions.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::compgraph::{SimilarityKind, DEFAULT_TAU1};
use crate::encoder::{
    encode_steps, gat_node, prepare_steps, DecayKind, EncoderConfig, FeatureTransformIds, GatIds, SeqEncoderIds, TimeNorm,
};
use crate::error::{Error, Result};
use crate::params::{ParamStore, Tensor};
use crate::precompute::{GraphContext, TaskInputs};
use crate::predictor::{FusionIds, ForwardScaling, HeadIds, HIS_LEN};
use crate::sequences::{PropagationSequence, WalkParams, DEFAULT_LMAX};
use crate::store::CascadeStore;
use crate::tape::{Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Ablation {
    #[default]
    None,
    /// Competition encoder output replaced by zeros.
    NoCcg,
    /// Cross-sequence representation replaced by zeros.
    NoCps,
    /// No temporal decay.
    NoTd,
    /// Cosine similarity of static cascade features instead of Jaccard.
    CcgCos,
    /// Self and cross entries merged into one sequence.
    CpsMixed,
    /// Linear instead of exponential decay.
    TdLinear,
}

impl Ablation {
    pub const ALL: [Ablation; 7] =
        [Ablation::None, Ablation::NoCcg, Ablation::NoCps, Ablation::NoTd, Ablation::CcgCos, Ablation::CpsMixed, Ablation::TdLinear];

    pub fn as_str(self) -> &'static str {
        match self {
            Ablation::None => "none",
            Ablation::NoCcg => "ccg",
            Ablation::NoCps => "cps",
            Ablation::NoTd => "td",
            Ablation::CcgCos => "ccg-cos",
            Ablation::CpsMixed => "cps-mixed",
            Ablation::TdLinear => "td-linear",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.as_str() == s)
    }

    pub fn similarity(self) -> SimilarityKind {
        if self == Ablation::CcgCos {
            SimilarityKind::Cosine
        } else {
            SimilarityKind::Jaccard
        }
    }

    pub fn decay_kind(self, base: DecayKind) -> DecayKind {
        match self {
            Ablation::NoTd => DecayKind::None,
            Ablation::TdLinear => DecayKind::Linear,
            _ => base,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Architecture {
    #[default]
    Full,
    /// Heads over the auxiliary features only (the leakage-audit baseline).
    AuxBaseline,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    /// Static cascade attribute dimension.
    pub d_s: usize,
    pub lmax: usize,
    pub walks: WalkParams,
    pub tau1: f64,
    pub ablation: Ablation,
    pub architecture: Architecture,
    pub forward_scaling: ForwardScaling,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            encoder: EncoderConfig::default(),
            d_s: 0,
            lmax: DEFAULT_LMAX,
            walks: WalkParams::default(),
            tau1: DEFAULT_TAU1,
            ablation: Ablation::None,
            architecture: Architecture::Full,
            forward_scaling: ForwardScaling::Log1p,
        }
    }
}

impl ModelConfig {
    /// Defaults with feature dimensions taken from the store.
    pub fn for_store(store: &CascadeStore) -> Self {
        let mut cfg = ModelConfig::default();
        cfg.encoder.d_n = store.promoter_features().dim();
        cfg.d_s = store.cascade_features().dim();
        cfg
    }

    pub fn effective_encoder(&self) -> EncoderConfig {
        EncoderConfig { decay_kind: self.ablation.decay_kind(self.encoder.decay_kind), ..self.encoder }
    }

    pub fn gat_input_dim(&self) -> usize {
        self.d_s + HIS_LEN
    }

    pub fn uses_sequences(&self) -> bool {
        self.architecture == Architecture::Full
    }

    pub fn needs_graph(&self) -> bool {
        self.architecture == Architecture::Full
    }

    pub fn needs_cross(&self) -> bool {
        self.architecture == Architecture::Full && self.ablation != Ablation::NoCps
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.lmax == 0 || self.walks.walks == 0 || self.walks.hops == 0 {
            return Err(Error::InvalidParameter { name: "lmax/tau2/tau3", reason: "must be at least 1".into() });
        }
        if !(self.tau1 > 0.0 && self.tau1 <= 1.0) {
            return Err(Error::InvalidParameter { name: "tau1", reason: "must lie in (0, 1]".into() });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelIds {
    pub ft: Option<FeatureTransformIds>,
    pub self_enc: Option<SeqEncoderIds>,
    pub cross_enc: Option<SeqEncoderIds>,
    pub gat: Option<GatIds>,
    pub fuse: FusionIds,
    pub pop: HeadIds,
    pub con: HeadIds,
}

/// Parameter names of the conversion head; everything else is frozen in the
/// second stage.
pub const CON_PREFIX: &str = "con.";

pub fn is_con_param(name: &str) -> bool {
    name.starts_with(CON_PREFIX)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub ids: ModelIds,
    pub seed: u64,
}

/// Read-only data a forward pass needs besides the task itself.
#[derive(Clone, Copy)]
pub struct ForwardEnv<'a> {
    pub store: &'a CascadeStore,
    pub contexts: &'a [GraphContext],
    pub norm: TimeNorm,
}

#[derive(Debug, Clone, Copy)]
pub struct ForwardOutput {
    pub pop: Var,
    pub con: Var,
}

impl Model {
    /// Registers the parameters for `config` and initializes them from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        use rand::SeedableRng;
        let mut m = Self::uninitialized(config)?;
        m.params.initialize(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        m.seed = seed;
        Ok(m)
    }

    /// Same layout as [`Model::new`] with all-zero values.
    pub fn uninitialized(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut p = ParamStore::new();
        let d_h = config.encoder.d_h;
        let full = config.architecture == Architecture::Full;
        let enc = config.encoder;
        let ft = full.then(|| FeatureTransformIds::register(&mut p, &enc));
        let self_enc = full.then(|| SeqEncoderIds::register(&mut p, "self", &enc));
        let cross_enc = full.then(|| SeqEncoderIds::register(&mut p, "cross", &enc));
        let gat = full.then(|| GatIds::register(&mut p, config.gat_input_dim(), d_h));
        let fuse = FusionIds::register(&mut p, config.d_s, d_h);
        let pop_in = if full { 4 * d_h + HIS_LEN } else { HIS_LEN + d_h };
        let pop = HeadIds::register(&mut p, "pop", pop_in, d_h);
        let con = HeadIds::register(&mut p, "con", pop_in + 1, d_h);
        Ok(Model { config, params: p, ids: ModelIds { ft, self_enc, cross_enc, gat, fuse, pop, con }, seed: 0 })
    }

    pub fn stage_mask(&self, conversion_stage: bool) -> Vec<bool> {
        self.params.mask(|n| conversion_stage == is_con_param(n))
    }

    /// Parameter groups as `(label, name prefix)` pairs.
    pub fn parameter_groups(&self) -> Vec<(&'static str, &'static str)> {
        let mut g = Vec::new();
        if self.ids.ft.is_some() {
            g.extend([
                ("feature transform", "enc."),
                ("recurrent gates", "self.gru"),
                ("recurrent gates", "cross.gru"),
                ("attention", "self.att"),
                ("attention", "cross.att"),
                ("graph attention", "gat."),
            ]);
        }
        g.extend([("fusion", "fuse."), ("popularity head", "pop."), ("conversion head", "con.")]);
        g
    }

    /// Output bias of the popularity head set so that its initial prediction
    /// is roughly `mean_label`.
    pub fn set_output_bias(&mut self, head_conversion: bool, mean_label: f64) {
        let head = if head_conversion { self.ids.con } else { self.ids.pop };
        let b: &mut Tensor = self.params.get_mut(head.b3);
        b.data[0] = crate::math::softplus_inverse(mean_label.max(1e-3));
    }

    fn sequence_steps<'s>(
        &self,
        env: &ForwardEnv<'s>,
        seq: &'s PropagationSequence,
        t_last: f64,
        enc: &EncoderConfig,
    ) -> Vec<crate::encoder::Step<'s>> {
        let table = env.store.promoter_features();
        prepare_steps(seq.real_entries().map(|(p, t)| (table.get(p.index()), t)), &env.norm, t_last, enc)
    }

    /// Records the forward pass of one task on `t` (whose parameters must be
    /// `self.params`).
    pub fn forward(&self, t: &mut Tape, env: &ForwardEnv, task: usize, inp: &TaskInputs) -> Result<ForwardOutput> {
        let cfg = &self.config;
        let d_h = cfg.encoder.d_h;
        let fused = if cfg.d_s > 0 {
            self.ids.fuse.forward(t, env.store.cascade_features().get(inp.cascade.index()))
        } else {
            t.zeros(d_h)
        };
        let his_pop = t.constant(&inp.aux.his_pop);
        let his_con = t.constant(&inp.aux.his_con);
        let (pop_parts, con_parts): (Vec<Var>, Vec<Var>) = match cfg.architecture {
            Architecture::AuxBaseline => (alloc::vec![his_pop, fused], alloc::vec![his_con, fused]),
            Architecture::Full => {
                let (ft, self_enc, cross_enc, gat) = match (self.ids.ft, self.ids.self_enc, self.ids.cross_enc, self.ids.gat) {
                    (Some(a), Some(b), Some(c), Some(d)) => (a, b, c, d),
                    _ => unreachable!("full architecture registers every encoder"),
                };
                let enc = cfg.effective_encoder();
                let mixed = cfg.ablation == Ablation::CpsMixed;
                let own_seq = if mixed { inp.mixed_seq.as_ref().ok_or(Error::MissingPrecompute(task))? } else { &inp.self_seq };
                let steps = self.sequence_steps(env, own_seq, inp.t_last, &enc);
                let s_self = encode_steps(t, &ft, &self_enc, &enc, &steps);
                let s_cross = if mixed || cfg.ablation == Ablation::NoCps {
                    t.zeros(d_h)
                } else {
                    let cross = inp.cross_seq.as_ref().ok_or(Error::MissingPrecompute(task))?;
                    let steps = self.sequence_steps(env, cross, inp.t_last, &enc);
                    encode_steps(t, &ft, &cross_enc, &enc, &steps)
                };
                let z_comp = if cfg.ablation == Ablation::NoCcg {
                    t.zeros(d_h)
                } else {
                    let ctx = inp.graph.and_then(|g| env.contexts.get(g)).ok_or(Error::MissingPrecompute(task))?;
                    let own = &ctx.node_features[inp.cascade.index()];
                    let neighbors: Vec<(&[f64], f64)> = ctx
                        .graph
                        .neighbor_ids(inp.cascade)?
                        .iter()
                        .zip(ctx.graph.neighbor_weights(inp.cascade)?)
                        .map(|(j, &w)| (ctx.node_features[j.index()].as_slice(), w))
                        .collect();
                    gat_node(t, &gat, &enc.gat, own, &neighbors).0
                };
                (alloc::vec![z_comp, s_self, s_cross, his_pop, fused], alloc::vec![z_comp, s_self, s_cross, his_con, fused])
            }
        };
        let f_pop = t.concat(&pop_parts);
        let pop = self.ids.pop.forward(t, f_pop);
        let forward = match cfg.forward_scaling {
            ForwardScaling::Log1p => t.ln_1p(pop),
            ForwardScaling::Raw => pop,
        };
        let mut parts = con_parts;
        parts.push(forward);
        let f_con = t.concat(&parts);
        let con = self.ids.con.forward(t, f_con);
        Ok(ForwardOutput { pop, con })
    }
}
