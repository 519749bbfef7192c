use std::collections::BTreeSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::rdb::{AttrValue, Subgraph};
use crate::tensor::SparseRows;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageDirection {
    /// Edges are symmetrized and deduplicated.
    #[default]
    Undirected,
    /// A node hears only from rows that reference it.
    Directed,
}

/// Disjoint union of subgraphs, node ids global to the batch.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphBatch {
    pub node_type: Vec<usize>,
    pub attrs: Vec<Vec<AttrValue>>,
    pub graph_of: Vec<usize>,
    /// Node ids of each graph, ascending.
    pub graphs: Arc<Vec<Vec<usize>>>,
    /// Target node of each graph.
    pub targets: Vec<usize>,
    /// Directed `(src, dst)` pairs.
    pub edges: Vec<(usize, usize)>,
    pub labels: Vec<Option<bool>>,
}

impl GraphBatch {
    pub fn from_subgraphs<'a>(subgraphs: impl IntoIterator<Item = &'a Subgraph>) -> Self {
        let mut b = GraphBatch {
            node_type: Vec::new(),
            attrs: Vec::new(),
            graph_of: Vec::new(),
            graphs: Arc::new(Vec::new()),
            targets: Vec::new(),
            edges: Vec::new(),
            labels: Vec::new(),
        };
        let mut graphs = Vec::new();
        for (g, sg) in subgraphs.into_iter().enumerate() {
            let offset = b.node_type.len();
            for n in &sg.nodes {
                b.node_type.push(n.node_type);
                b.attrs.push(n.attrs.clone());
                b.graph_of.push(g);
            }
            graphs.push((offset..offset + sg.nodes.len()).collect());
            b.targets.push(offset);
            b.edges.extend(sg.edges.iter().map(|e| (offset + e.src, offset + e.dst)));
            b.labels.push(sg.label);
        }
        b.graphs = Arc::new(graphs);
        b
    }

    pub fn node_count(&self) -> usize {
        self.node_type.len()
    }

    pub fn graph_count(&self) -> usize {
        self.graphs.len()
    }

    /// Same structure with replaced attributes.
    pub fn with_attrs(&self, attrs: Vec<Vec<AttrValue>>) -> Self {
        assert_eq!(attrs.len(), self.node_count());
        GraphBatch {
            attrs,
            ..self.clone()
        }
    }

    /// Sorted neighbor lists each node aggregates over. Self-references are dropped.
    pub fn neighbors(&self, direction: MessageDirection) -> Vec<Vec<usize>> {
        let mut sets = vec![BTreeSet::new(); self.node_count()];
        for &(s, d) in &self.edges {
            if s == d {
                continue;
            }
            sets[d].insert(s);
            if direction == MessageDirection::Undirected {
                sets[s].insert(d);
            }
        }
        sets.into_iter().map(|s| s.into_iter().collect()).collect()
    }

    /// Normalized propagation matrix with self loops: symmetric
    /// `D^-1/2 (A + I) D^-1/2` when undirected, row-normalized when directed.
    pub fn gcn_propagation(&self, direction: MessageDirection) -> SparseRows {
        let nbrs = self.neighbors(direction);
        let deg: Vec<f64> = nbrs.iter().map(|n| n.len() as f64 + 1.0).collect();
        let rows = nbrs
            .iter()
            .enumerate()
            .map(|(i, n)| {
                let mut row: Vec<(usize, f64)> = Vec::with_capacity(n.len() + 1);
                let coef = |j: usize| match direction {
                    MessageDirection::Undirected => 1.0 / (deg[i] * deg[j]).sqrt(),
                    MessageDirection::Directed => 1.0 / deg[i],
                };
                row.push((i, coef(i)));
                row.extend(n.iter().map(|&j| (j, coef(j))));
                row
            })
            .collect();
        SparseRows {
            input_rows: self.node_count(),
            rows,
        }
    }
}
