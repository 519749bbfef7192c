//! Pretraining objectives: attribute denoising, InfoGraph, InfoNode and their hybrid.

mod corruption;
mod losses;
mod pairs;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use corruption::{corrupt_features, Corruption, CorruptionPlan, SlotTarget};
pub use losses::{
    ebm_nce, generative_loss, hybrid_loss, infograph_loss, infonode_loss, pair_scores, MaskedPredictions, Views,
};
pub(crate) use losses::check_alphas;
pub use pairs::{build_pairs, ContrastiveMode, NodeNegatives, Pair, PairKind, PairSet};

use crate::encoder::{fan_in_init, Encoder, FeatureLayout, FeatureSlot, GraphBatch};
use crate::error::{Error, Result};
use crate::seed::derive_seed;
use crate::tensor::{ParamStore, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Untrained,
    Generative,
    #[serde(rename = "infograph")]
    InfoGraph,
    #[serde(rename = "infonode")]
    InfoNode,
    Hybrid,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::Untrained,
        Strategy::Generative,
        Strategy::InfoGraph,
        Strategy::InfoNode,
        Strategy::Hybrid,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Untrained => "untrained",
            Strategy::Generative => "generative",
            Strategy::InfoGraph => "infograph",
            Strategy::InfoNode => "infonode",
            Strategy::Hybrid => "hybrid",
        }
    }

    pub fn is_contrastive_only(self) -> bool {
        matches!(self, Strategy::InfoGraph | Strategy::InfoNode)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown strategy `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SslConfig {
    pub mask_rate: f64,
    /// `None` keeps every candidate negative.
    pub negatives_per_positive: Option<usize>,
    pub alpha0: f64,
    pub alpha1: f64,
    /// Contrastive half of the hybrid objective.
    pub hybrid_contrastive: ContrastiveMode,
    pub node_negatives: NodeNegatives,
    /// Reconstruct every non-missing slot of the corrupted batch. When false,
    /// only the masked slots are targets; on data where one attribute is
    /// independent of all others, that variant teaches the encoder to drop it.
    pub reconstruct_all: bool,
}

impl Default for SslConfig {
    fn default() -> Self {
        SslConfig {
            mask_rate: 0.15,
            negatives_per_positive: Some(1),
            alpha0: 1.0,
            alpha1: 1.0,
            hybrid_contrastive: ContrastiveMode::InfoNode,
            node_negatives: NodeNegatives::CrossGraph,
            reconstruct_all: true,
        }
    }
}

/// Scalar summaries of one pretraining batch.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct SslBatchOutcome {
    pub generative: Option<f64>,
    pub contrastive: Option<f64>,
    pub total: f64,
    pub positives: usize,
    pub negatives: usize,
    pub mean_pos_score: Option<f64>,
    pub mean_neg_score: Option<f64>,
}

fn decoder_width(ty: &crate::encoder::TypeLayout) -> usize {
    ty.slots
        .iter()
        .map(|s| match s {
            FeatureSlot::Continuous { .. } => 1,
            FeatureSlot::Categorical { cardinality, .. } => *cardinality,
        })
        .sum()
}

/// Adds per-type two-layer decoder parameters `decoder.<type>.*`.
pub fn init_decoder_params(encoder: &Encoder, store: &mut ParamStore, seed: u64) -> Result<()> {
    let d = encoder.config.hidden;
    for ty in &encoder.layout.types {
        let out = decoder_width(ty);
        if out == 0 {
            continue;
        }
        let p = |s: &str| format!("decoder.{}.{s}", ty.name);
        fan_in_init(store, &p("w1"), &[d, d], seed)?;
        store.insert(p("b1"), Tensor::zeros(&[d]))?;
        fan_in_init(store, &p("w2"), &[d, out], seed)?;
        store.insert(p("b2"), Tensor::zeros(&[out]))?;
    }
    Ok(())
}

/// Decoder predictions at the requested slots, from final node states `h`.
pub fn decode_targets(
    tape: &mut Tape,
    store: &ParamStore,
    layout: &FeatureLayout,
    h: Var,
    node_type: &[usize],
    targets: &[SlotTarget],
) -> Result<MaskedPredictions> {
    let mut preds = MaskedPredictions::default();
    for (t, ty) in layout.types.iter().enumerate() {
        let of_type: Vec<&SlotTarget> = targets.iter().filter(|x| node_type[x.node] == t).collect();
        if of_type.is_empty() {
            continue;
        }
        // local rows for the nodes that carry targets
        let mut nodes: Vec<usize> = of_type.iter().map(|x| x.node).collect();
        nodes.sort_unstable();
        nodes.dedup();
        let local = |n: usize| nodes.binary_search(&n).expect("node listed");
        let p = |s: &str| format!("decoder.{}.{s}", ty.name);
        let rows = tape.gather_rows(h, &nodes)?;
        let (w1, b1, w2, b2) = (
            tape.param(store, &p("w1"))?,
            tape.param(store, &p("b1"))?,
            tape.param(store, &p("w2"))?,
            tape.param(store, &p("b2"))?,
        );
        let z = tape.matmul(rows, w1)?;
        let z = tape.add_bias(z, b1)?;
        let z = tape.relu(z)?;
        let z = tape.matmul(z, w2)?;
        let out = tape.add_bias(z, b2)?;
        let width = decoder_width(ty);

        let mut offset = 0;
        for (s, slot) in ty.slots.iter().enumerate() {
            let hits: Vec<&&SlotTarget> = of_type.iter().filter(|x| x.slot == s).collect();
            match slot {
                FeatureSlot::Continuous { mean, std, .. } => {
                    if !hits.is_empty() {
                        let flat: Vec<usize> = hits.iter().map(|x| local(x.node) * width + offset).collect();
                        let values = hits
                            .iter()
                            .map(|x| FeatureLayout::continuous_input(&x.value, *mean, *std).0)
                            .collect();
                        preds.continuous.push((tape.pick_flat(out, &flat)?, values));
                    }
                    offset += 1;
                }
                FeatureSlot::Categorical { cardinality, .. } => {
                    if !hits.is_empty() {
                        let block = tape.slice_cols(out, offset, *cardinality)?;
                        let r: Vec<usize> = hits.iter().map(|x| local(x.node)).collect();
                        let logits = tape.gather_rows(block, &r)?;
                        let classes = hits
                            .iter()
                            .map(|x| FeatureLayout::category_index(&x.value, *cardinality))
                            .collect();
                        preds.categorical.push((logits, classes));
                    }
                    offset += cardinality;
                }
            }
        }
    }
    Ok(preds)
}

fn all_slot_targets(batch: &GraphBatch) -> Vec<SlotTarget> {
    let mut out = Vec::new();
    for (node, attrs) in batch.attrs.iter().enumerate() {
        for (slot, value) in attrs.iter().enumerate() {
            if !value.is_missing() {
                out.push(SlotTarget {
                    node,
                    slot,
                    value: *value,
                });
            }
        }
    }
    out
}

/// Denoising loss: corrupt, encode the corrupted batch, decode the targets.
pub fn generative_objective(
    tape: &mut Tape,
    store: &ParamStore,
    encoder: &Encoder,
    batch: &GraphBatch,
    cfg: &SslConfig,
    seed: u64,
) -> Result<Var> {
    let corruption = corrupt_features(batch, cfg.mask_rate, seed)?;
    let targets = if cfg.reconstruct_all {
        all_slot_targets(batch)
    } else {
        corruption.targets.clone()
    };
    let corrupted = batch.with_attrs(corruption.attrs);
    let fwd = encoder.forward(tape, store, &corrupted)?;
    let preds = decode_targets(tape, store, &encoder.layout, fwd.last(), &batch.node_type, &targets)?;
    generative_loss(tape, &preds)
}

/// Contrastive loss on a clean forward pass, plus the pairs used.
pub fn contrastive_objective(
    tape: &mut Tape,
    store: &ParamStore,
    encoder: &Encoder,
    batch: &GraphBatch,
    mode: ContrastiveMode,
    cfg: &SslConfig,
    seed: u64,
) -> Result<(Var, PairSet, Views)> {
    let fwd = encoder.forward(tape, store, batch)?;
    let views = Views {
        h0: fwd.layers[0],
        ht: fwd.last(),
        graph: fwd.graph,
    };
    let pairs = build_pairs(batch, mode, cfg.negatives_per_positive, cfg.node_negatives, seed)?;
    let loss = match mode {
        ContrastiveMode::InfoGraph => infograph_loss(tape, views, &pairs)?,
        ContrastiveMode::InfoNode => infonode_loss(tape, views, &pairs)?,
    };
    Ok((loss, pairs, views))
}

fn mean_scores(tape: &mut Tape, views: Views, pairs: &[Pair]) -> Result<Option<f64>> {
    let mut total = 0.0;
    for kind in [PairKind::NodeGraph, PairKind::NodeNode] {
        let (l, r) = PairSet::of_kind(pairs, kind);
        if l.is_empty() {
            continue;
        }
        let (left, right) = match kind {
            PairKind::NodeGraph => (views.ht, views.graph),
            PairKind::NodeNode => (views.h0, views.ht),
        };
        let s = pair_scores(tape, left, right, &l, &r)?;
        total += tape.value(s).data().iter().sum::<f64>();
    }
    Ok((!pairs.is_empty()).then(|| total / pairs.len() as f64))
}

/// Pretraining loss of one batch for a strategy. Labels in `batch` are never read.
pub fn ssl_loss(
    tape: &mut Tape,
    store: &ParamStore,
    encoder: &Encoder,
    strategy: Strategy,
    cfg: &SslConfig,
    batch: &GraphBatch,
    seed: u64,
) -> Result<(Var, SslBatchOutcome)> {
    let mut outcome = SslBatchOutcome::default();
    let corrupt_seed = derive_seed(seed, "ssl_corrupt", 0);
    let pair_seed = derive_seed(seed, "ssl_pairs", 0);
    let contrastive = |tape: &mut Tape, mode, outcome: &mut SslBatchOutcome| -> Result<Var> {
        let (loss, pairs, views) = contrastive_objective(tape, store, encoder, batch, mode, cfg, pair_seed)?;
        outcome.positives = pairs.pos.len();
        outcome.negatives = pairs.neg.len();
        outcome.mean_pos_score = mean_scores(tape, views, &pairs.pos)?;
        outcome.mean_neg_score = mean_scores(tape, views, &pairs.neg)?;
        outcome.contrastive = Some(tape.value(loss).item());
        Ok(loss)
    };
    let loss = match strategy {
        Strategy::Untrained => {
            return Err(Error::InvalidInput("the untrained strategy has no pretraining loss".into()))
        }
        Strategy::Generative => {
            let l = generative_objective(tape, store, encoder, batch, cfg, corrupt_seed)?;
            outcome.generative = Some(tape.value(l).item());
            l
        }
        Strategy::InfoGraph => contrastive(tape, ContrastiveMode::InfoGraph, &mut outcome)?,
        Strategy::InfoNode => contrastive(tape, ContrastiveMode::InfoNode, &mut outcome)?,
        Strategy::Hybrid => {
            losses::check_alphas(cfg.alpha0, cfg.alpha1)?;
            let lg = generative_objective(tape, store, encoder, batch, cfg, corrupt_seed)?;
            outcome.generative = Some(tape.value(lg).item());
            let lc = contrastive(tape, cfg.hybrid_contrastive, &mut outcome)?;
            hybrid_loss(tape, lg, lc, cfg.alpha0, cfg.alpha1)?
        }
    };
    outcome.total = tape.value(loss).item();
    Ok((loss, outcome))
}

/// Strips labels so a batch can be handed to pretraining.
pub fn unlabeled(batch: &GraphBatch) -> GraphBatch {
    GraphBatch {
        labels: vec![None; batch.graph_count()],
        ..batch.clone()
    }
}

#[cfg(test)]
mod tests;
