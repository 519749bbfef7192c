//! Per-type embedding, GCN/PNA message passing, attention readout and the prediction head.

mod batch;
mod layers;
mod layout;

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use batch::{GraphBatch, MessageDirection};
pub use layers::{attention_readout, gcn_layer, pna_aggregates, pna_layer, predict_head, supervised_loss};
pub use layout::{FeatureLayout, FeatureSlot, TypeLayout};

use crate::error::{Error, Result};
use crate::rdb::Subgraph;
use crate::seed::derive_seed;
use crate::tensor::{ParamStore, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backbone {
    #[default]
    Gcn,
    Pna,
}

impl Backbone {
    pub fn name(self) -> &'static str {
        match self {
            Backbone::Gcn => "gcn",
            Backbone::Pna => "pna",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Readout {
    #[default]
    Attention,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictionSource {
    #[default]
    GraphEmbedding,
    TargetNode,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub backbone: Backbone,
    pub layers: usize,
    pub hidden: usize,
    /// Width of each categorical embedding lookup.
    pub embed_dim: usize,
    pub readout: Readout,
    pub prediction_source: PredictionSource,
    pub message_direction: MessageDirection,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            backbone: Backbone::Gcn,
            layers: 3,
            hidden: 64,
            embed_dim: 8,
            readout: Readout::Attention,
            prediction_source: PredictionSource::GraphEmbedding,
            message_direction: MessageDirection::Undirected,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.hidden == 0 || self.embed_dim == 0 {
            return Err(Error::Config(format!(
                "encoder needs layers, hidden and embed_dim >= 1 (got {}, {}, {})",
                self.layers, self.hidden, self.embed_dim
            )));
        }
        Ok(())
    }
}

/// Forward-pass handles on the tape: `layers[t]` is `h^t`, `graph` is `h_g`.
#[derive(Clone, Debug)]
pub struct Forward {
    pub layers: Vec<Var>,
    pub graph: Var,
}

impl Forward {
    pub fn last(&self) -> Var {
        *self.layers.last().expect("at least h^0")
    }
}

/// Materialized representations of one batch.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeRepresentations {
    pub layers: Vec<Tensor>,
    pub graph: Tensor,
}

fn uniform(shape: &[usize], bound: f64, seed: u64, name: &str) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, name, 0));
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches")
}

pub(crate) fn fan_in_init(store: &mut ParamStore, name: &str, shape: &[usize], seed: u64) -> Result<()> {
    let bound = 1.0 / (shape[0].max(1) as f64).sqrt();
    store.insert(name, uniform(shape, bound, seed, name))
}

/// Encoder architecture bound to a feature layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub layout: FeatureLayout,
}

impl Encoder {
    pub fn new(config: EncoderConfig, layout: FeatureLayout) -> Result<Self> {
        config.validate()?;
        Ok(Encoder { config, layout })
    }

    /// Seeded random initialization of every encoder and head parameter.
    pub fn init_params(&self, seed: u64) -> Result<ParamStore> {
        let cfg = &self.config;
        let (d, e) = (cfg.hidden, cfg.embed_dim);
        let mut store = ParamStore::new();
        for ty in &self.layout.types {
            for (k, (_, card)) in ty.categorical_slots().enumerate() {
                let name = format!("embed.{}.cat{k}", ty.name);
                store.insert(&name, uniform(&[card, e], 1.0 / (e as f64).sqrt(), seed, &name))?;
            }
            let width = ty.input_width(e);
            if width > 0 {
                fan_in_init(&mut store, &format!("embed.{}.proj", ty.name), &[width, d], seed)?;
            }
            let name = format!("embed.{}.type", ty.name);
            store.insert(&name, uniform(&[d], 1.0 / (d as f64).sqrt(), seed, &name))?;
        }
        let layer_in = match cfg.backbone {
            Backbone::Gcn => d,
            Backbone::Pna => 5 * d,
        };
        for l in 0..cfg.layers {
            fan_in_init(&mut store, &format!("layer.{l}.w"), &[layer_in, d], seed)?;
            store.insert(format!("layer.{l}.b"), Tensor::zeros(&[d]))?;
        }
        fan_in_init(&mut store, "readout.w", &[d, d], seed)?;
        fan_in_init(&mut store, "readout.v", &[d, 1], seed)?;
        fan_in_init(&mut store, "readout.u", &[d, d], seed)?;
        fan_in_init(&mut store, "head.w1", &[d, d], seed)?;
        store.insert("head.b1", Tensor::zeros(&[d]))?;
        fan_in_init(&mut store, "head.w2", &[d, 1], seed)?;
        store.insert("head.b2", Tensor::zeros(&[1]))?;
        Ok(store)
    }

    /// `h^0`: per-type categorical lookups and standardized continuous values
    /// with missing indicators, projected to the hidden width plus a learned
    /// per-type vector.
    pub fn embed_nodes(&self, tape: &mut Tape, store: &ParamStore, batch: &GraphBatch) -> Result<Var> {
        let (d, e) = (self.config.hidden, self.config.embed_dim);
        let mut by_type: Vec<Vec<usize>> = Vec::new();
        for (i, &t) in batch.node_type.iter().enumerate() {
            self.layout.type_layout(t)?;
            if by_type.len() <= t {
                by_type.resize(t + 1, Vec::new());
            }
            by_type[t].push(i);
        }
        let mut blocks = Vec::new();
        let mut order = Vec::with_capacity(batch.node_count());
        for (t, nodes) in by_type.iter().enumerate() {
            if nodes.is_empty() {
                continue;
            }
            let ty = &self.layout.types[t];
            let mut parts = Vec::new();
            for (k, (slot, card)) in ty.categorical_slots().enumerate() {
                let table = tape.param(store, &format!("embed.{}.cat{k}", ty.name))?;
                let idx: Vec<usize> = nodes
                    .iter()
                    .map(|&i| FeatureLayout::category_index(&batch.attrs[i][slot], card))
                    .collect();
                parts.push(tape.gather_rows(table, &idx)?);
            }
            let cont: Vec<(usize, f64, f64)> = ty.continuous_slots().collect();
            if !cont.is_empty() {
                let c = cont.len();
                let mut data = vec![0.0; nodes.len() * 2 * c];
                for (r, &i) in nodes.iter().enumerate() {
                    for (k, &(slot, mean, std)) in cont.iter().enumerate() {
                        let (x, missing) = FeatureLayout::continuous_input(&batch.attrs[i][slot], mean, std);
                        data[r * 2 * c + k] = x;
                        data[r * 2 * c + c + k] = missing;
                    }
                }
                parts.push(tape.constant(Tensor::new(vec![nodes.len(), 2 * c], data)?)?);
            }
            let type_vec = tape.param(store, &format!("embed.{}.type", ty.name))?;
            let base = if parts.is_empty() {
                tape.constant(Tensor::zeros(&[nodes.len(), d]))?
            } else {
                let x = if parts.len() == 1 { parts[0] } else { tape.concat_cols(&parts)? };
                debug_assert_eq!(tape.value(x).cols(), ty.input_width(e));
                let proj = tape.param(store, &format!("embed.{}.proj", ty.name))?;
                tape.matmul(x, proj)?
            };
            blocks.push(tape.add_bias(base, type_vec)?);
            order.extend_from_slice(nodes);
        }
        if blocks.is_empty() {
            return Err(Error::InvalidInput("cannot encode an empty batch".into()));
        }
        let stacked = if blocks.len() == 1 { blocks[0] } else { tape.concat_rows(&blocks)? };
        let mut position = vec![0; order.len()];
        for (p, &node) in order.iter().enumerate() {
            position[node] = p;
        }
        tape.gather_rows(stacked, &position)
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, batch: &GraphBatch) -> Result<Forward> {
        let cfg = &self.config;
        let h0 = self.embed_nodes(tape, store, batch)?;
        let mut layers = vec![h0];
        let propagation = Arc::new(batch.gcn_propagation(cfg.message_direction));
        let neighbors = Arc::new(batch.neighbors(cfg.message_direction));
        for l in 0..cfg.layers {
            let w = tape.param(store, &format!("layer.{l}.w"))?;
            let b = tape.param(store, &format!("layer.{l}.b"))?;
            let prev = *layers.last().unwrap();
            let next = match cfg.backbone {
                Backbone::Gcn => gcn_layer(tape, prev, propagation.clone(), w, Some(b), true)?,
                Backbone::Pna => pna_layer(tape, prev, &neighbors, w, Some(b), true)?,
            };
            layers.push(next);
        }
        let w = tape.param(store, "readout.w")?;
        let v = tape.param(store, "readout.v")?;
        let u = tape.param(store, "readout.u")?;
        let (graph, _) = attention_readout(tape, *layers.last().unwrap(), &batch.graphs, w, v, u)?;
        Ok(Forward { layers, graph })
    }

    /// Rows fed to the head, one per graph.
    pub fn prediction_input(&self, tape: &mut Tape, fwd: &Forward, batch: &GraphBatch) -> Result<Var> {
        match self.config.prediction_source {
            PredictionSource::GraphEmbedding => Ok(fwd.graph),
            PredictionSource::TargetNode => tape.gather_rows(fwd.last(), &batch.targets),
        }
    }

    /// One logit per graph.
    pub fn logits(&self, tape: &mut Tape, store: &ParamStore, fwd: &Forward, batch: &GraphBatch) -> Result<Var> {
        let x = self.prediction_input(tape, fwd, batch)?;
        let w1 = tape.param(store, "head.w1")?;
        let b1 = tape.param(store, "head.b1")?;
        let w2 = tape.param(store, "head.w2")?;
        let b2 = tape.param(store, "head.b2")?;
        predict_head(tape, x, w1, b1, w2, b2)
    }

    pub fn encode_batch(&self, store: &ParamStore, batch: &GraphBatch) -> Result<NodeRepresentations> {
        let mut tape = Tape::new();
        let fwd = self.forward(&mut tape, store, batch)?;
        Ok(NodeRepresentations {
            layers: fwd.layers.iter().map(|&v| tape.value(v).clone()).collect(),
            graph: tape.value(fwd.graph).clone(),
        })
    }

    pub fn encode(&self, subgraph: &Subgraph, store: &ParamStore) -> Result<NodeRepresentations> {
        self.encode_batch(store, &GraphBatch::from_subgraphs([subgraph]))
    }
}

/// Mean pairwise cosine similarity of node rows within each multi-node graph,
/// averaged over graphs, for every layer. `None` when no graph has two nodes.
pub fn oversmoothing(reps: &NodeRepresentations, batch: &GraphBatch) -> Vec<Option<f64>> {
    reps.layers
        .iter()
        .map(|h| {
            let mut per_graph = Vec::new();
            for nodes in batch.graphs.iter().filter(|g| g.len() >= 2) {
                let mut total = 0.0;
                let mut pairs = 0usize;
                for (a, &i) in nodes.iter().enumerate() {
                    for &j in &nodes[a + 1..] {
                        total += cosine(h.row(i), h.row(j));
                        pairs += 1;
                    }
                }
                per_graph.push(total / pairs as f64);
            }
            (!per_graph.is_empty()).then(|| per_graph.iter().sum::<f64>() / per_graph.len() as f64)
        })
        .collect()
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    match (na > 1e-12, nb > 1e-12) {
        (true, true) => dot / (na * nb),
        (false, false) => 1.0,
        _ => 0.0,
    }
}
