use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::GraphBatch;
use crate::error::{Error, Result};
use crate::seed::derive_seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContrastiveMode {
    InfoGraph,
    InfoNode,
}

/// Where node0-nodeT negatives may come from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeNegatives {
    #[default]
    CrossGraph,
    /// Any other node, including nodes of the same graph.
    AnyOtherNode,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PairKind {
    /// `(h_i^T, h_g)`: `left` is a node, `right` a graph.
    NodeGraph,
    /// `(h_i^0, h_j^T)`: both sides are nodes.
    NodeNode,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Pair {
    pub kind: PairKind,
    pub left: usize,
    pub right: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PairSet {
    pub pos: Vec<Pair>,
    pub neg: Vec<Pair>,
}

impl PairSet {
    pub fn of_kind(pairs: &[Pair], kind: PairKind) -> (Vec<usize>, Vec<usize>) {
        pairs.iter().filter(|p| p.kind == kind).map(|p| (p.left, p.right)).unzip()
    }
}

/// Positive and negative pairs for one batch. `negatives_per_positive = None`
/// keeps every candidate negative; otherwise each kind keeps
/// `k * |Pos_kind|` negatives drawn without replacement.
pub fn build_pairs(
    batch: &GraphBatch,
    mode: ContrastiveMode,
    negatives_per_positive: Option<usize>,
    node_negatives: NodeNegatives,
    seed: u64,
) -> Result<PairSet> {
    if batch.graph_count() < 2 {
        return Err(Error::InvalidInput(
            "contrastive pairs need at least two graphs in the batch".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "build_pairs", batch.node_count() as u64));
    let n = batch.node_count();
    let mut set = PairSet::default();

    let pos: Vec<Pair> = (0..n)
        .map(|i| Pair {
            kind: PairKind::NodeGraph,
            left: i,
            right: batch.graph_of[i],
        })
        .collect();
    let mut cand = Vec::new();
    for i in 0..n {
        for g in 0..batch.graph_count() {
            if g != batch.graph_of[i] {
                cand.push(Pair {
                    kind: PairKind::NodeGraph,
                    left: i,
                    right: g,
                });
            }
        }
    }
    set.neg.extend(subsample(cand, negatives_per_positive.map(|k| k * pos.len()), &mut rng));
    set.pos.extend(pos);

    if mode == ContrastiveMode::InfoNode {
        let pos: Vec<Pair> = (0..n)
            .map(|i| Pair {
                kind: PairKind::NodeNode,
                left: i,
                right: i,
            })
            .collect();
        let mut cand = Vec::new();
        for i in 0..n {
            for j in 0..n {
                let allowed = match node_negatives {
                    NodeNegatives::CrossGraph => batch.graph_of[i] != batch.graph_of[j],
                    NodeNegatives::AnyOtherNode => i != j,
                };
                if allowed {
                    cand.push(Pair {
                        kind: PairKind::NodeNode,
                        left: i,
                        right: j,
                    });
                }
            }
        }
        set.neg.extend(subsample(cand, negatives_per_positive.map(|k| k * pos.len()), &mut rng));
        set.pos.extend(pos);
    }
    Ok(set)
}

fn subsample(cand: Vec<Pair>, keep: Option<usize>, rng: &mut ChaCha8Rng) -> Vec<Pair> {
    match keep {
        Some(k) if k < cand.len() => {
            let mut idx = sample(rng, cand.len(), k).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|i| cand[i]).collect()
        }
        _ => cand,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    fn batch(sizes: &[usize]) -> GraphBatch {
        let mut graph_of = Vec::new();
        let mut graphs = Vec::new();
        for (g, &s) in sizes.iter().enumerate() {
            graphs.push((graph_of.len()..graph_of.len() + s).collect());
            graph_of.extend(std::iter::repeat_n(g, s));
        }
        let n = graph_of.len();
        GraphBatch {
            node_type: vec![0; n],
            attrs: vec![Vec::new(); n],
            targets: graphs.iter().map(|g: &Vec<usize>| g[0]).collect(),
            graph_of,
            graphs: Arc::new(graphs),
            edges: Vec::new(),
            labels: vec![None; sizes.len()],
        }
    }

    fn count(pairs: &[Pair], kind: PairKind) -> usize {
        pairs.iter().filter(|p| p.kind == kind).count()
    }

    #[test]
    fn infograph_three_plus_two() {
        let b = batch(&[3, 2]);
        let p = build_pairs(&b, ContrastiveMode::InfoGraph, None, NodeNegatives::CrossGraph, 0).unwrap();
        // oracle: enumerate (node, graph) over the batch and split by membership
        let (mut pos, mut neg) = (0, 0);
        for i in 0..5 {
            for g in 0..2 {
                if b.graph_of[i] == g { pos += 1 } else { neg += 1 }
            }
        }
        assert_eq!((p.pos.len(), p.neg.len()), (pos, neg));
        assert_eq!((pos, neg), (5, 5));
    }

    #[test]
    fn infonode_adds_node_pairs() {
        let b = batch(&[3, 2]);
        let p = build_pairs(&b, ContrastiveMode::InfoNode, None, NodeNegatives::CrossGraph, 0).unwrap();
        let cand = (0..5)
            .flat_map(|i| (0..5).map(move |j| (i, j)))
            .filter(|&(i, j)| b.graph_of[i] != b.graph_of[j])
            .count();
        assert_eq!(cand, 12);
        assert_eq!(count(&p.pos, PairKind::NodeNode), 5);
        assert_eq!(count(&p.neg, PairKind::NodeNode), cand);
        assert_eq!(count(&p.pos, PairKind::NodeGraph), 5);
    }

    #[test]
    fn one_negative_per_positive() {
        let b = batch(&[3, 2, 4]);
        for mode in [ContrastiveMode::InfoGraph, ContrastiveMode::InfoNode] {
            let p = build_pairs(&b, mode, Some(1), NodeNegatives::CrossGraph, 7).unwrap();
            assert_eq!(p.neg.len(), p.pos.len());
            for kind in [PairKind::NodeGraph, PairKind::NodeNode] {
                assert_eq!(count(&p.neg, kind), count(&p.pos, kind));
            }
        }
    }

    #[test]
    fn single_graph_is_an_error() {
        assert!(build_pairs(&batch(&[4]), ContrastiveMode::InfoGraph, None, NodeNegatives::CrossGraph, 0).is_err());
    }

    #[test]
    fn pair_sets_are_sound() {
        let b = batch(&[1, 3, 2, 5]);
        for seed in 0..10 {
            let p = build_pairs(&b, ContrastiveMode::InfoNode, Some(2), NodeNegatives::CrossGraph, seed).unwrap();
            for pair in &p.pos {
                match pair.kind {
                    PairKind::NodeGraph => assert_eq!(b.graph_of[pair.left], pair.right),
                    PairKind::NodeNode => assert_eq!(pair.left, pair.right),
                }
            }
            for pair in &p.neg {
                let other = match pair.kind {
                    PairKind::NodeGraph => pair.right,
                    PairKind::NodeNode => b.graph_of[pair.right],
                };
                assert_ne!(b.graph_of[pair.left], other);
            }
            let mut uniq = p.neg.clone();
            uniq.sort();
            uniq.dedup();
            assert_eq!(uniq.len(), p.neg.len());
        }
    }

    #[test]
    fn same_graph_node_negatives_on_request() {
        let b = batch(&[3, 2]);
        let p = build_pairs(&b, ContrastiveMode::InfoNode, None, NodeNegatives::AnyOtherNode, 0).unwrap();
        assert_eq!(count(&p.neg, PairKind::NodeNode), 20);
    }
}
