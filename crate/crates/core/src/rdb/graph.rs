use std::collections::{BTreeMap, HashMap, VecDeque};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::data::{AttrValue, ColumnData, Rdb};
use super::schema::RdbSchema;
use crate::error::{Error, Result};
use crate::seed::derive_seed;

/// Edge label: the reference column `(table, column)` that produced the edge.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Relation {
    pub table: usize,
    pub column: usize,
}

/// Directed labeled edge `(src, relation, dst)`: row `src` references row `dst`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub src: usize,
    pub relation: Relation,
    pub dst: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
enum Direction {
    Out,
    In,
}

/// Whole-database graph: one node per row, one edge per non-null reference cell.
#[derive(Clone, Debug)]
pub struct RdbGraph {
    /// First global node id of each table.
    pub table_offsets: Vec<usize>,
    pub node_table: Vec<usize>,
    pub node_row: Vec<usize>,
    pub edges: Vec<Edge>,
    /// Incident edges per node, with the direction seen from that node.
    incident: Vec<Vec<(usize, Direction)>>,
}

pub fn build_rdb_graph(rdb: &Rdb) -> RdbGraph {
    let mut table_offsets = Vec::with_capacity(rdb.tables.len());
    let mut node_table = Vec::new();
    let mut node_row = Vec::new();
    for (t, table) in rdb.tables.iter().enumerate() {
        table_offsets.push(node_table.len());
        for r in 0..table.row_count {
            node_table.push(t);
            node_row.push(r);
        }
    }
    let mut edges = Vec::new();
    for (t, table) in rdb.tables.iter().enumerate() {
        for (c, col) in table.columns.iter().enumerate() {
            if let ColumnData::Reference { table: target, rows } = col {
                for (r, hit) in rows.iter().enumerate() {
                    if let Some(dst_row) = hit {
                        edges.push(Edge {
                            src: table_offsets[t] + r,
                            relation: Relation { table: t, column: c },
                            dst: table_offsets[*target] + dst_row,
                        });
                    }
                }
            }
        }
    }
    let mut incident = vec![Vec::new(); node_table.len()];
    for (e, edge) in edges.iter().enumerate() {
        incident[edge.src].push((e, Direction::Out));
        incident[edge.dst].push((e, Direction::In));
    }
    RdbGraph {
        table_offsets,
        node_table,
        node_row,
        edges,
        incident,
    }
}

impl RdbGraph {
    pub fn node_count(&self) -> usize {
        self.node_table.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn node_id(&self, table: usize, row: usize) -> usize {
        self.table_offsets[table] + row
    }

    /// Undirected neighbors of a node, in edge order (may repeat).
    pub fn neighbors(&self, node: usize) -> impl Iterator<Item = usize> + '_ {
        self.incident[node].iter().map(move |&(e, dir)| match dir {
            Direction::Out => self.edges[e].dst,
            Direction::In => self.edges[e].src,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubgraphNode {
    /// Table index.
    pub node_type: usize,
    /// Row in that table.
    pub row: usize,
    pub attrs: Vec<AttrValue>,
}

/// One sampled neighborhood rooted at a target-table row. Node 0 is the target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Subgraph {
    pub target_row: usize,
    pub nodes: Vec<SubgraphNode>,
    /// Edges over local node ids, original direction and label kept.
    pub edges: Vec<Edge>,
    pub label: Option<bool>,
}

impl Subgraph {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Copy with the label removed, as handed to pretraining.
    pub fn without_label(&self) -> Subgraph {
        Subgraph {
            label: None,
            ..self.clone()
        }
    }

    /// Debug record: nodes with type and attributes, edges as `[i, relation, j]`.
    pub fn to_json(&self, rdb: &Rdb) -> serde_json::Value {
        let schema = &rdb.schema;
        let nodes: Vec<_> = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| {
                let attrs: serde_json::Map<String, serde_json::Value> = schema
                    .feature_columns(n.node_type)
                    .into_iter()
                    .zip(&n.attrs)
                    .map(|(c, v)| {
                        let col = &schema.tables[n.node_type].columns[c];
                        let value = match (v, &rdb.tables[n.node_type].columns[c]) {
                            (AttrValue::Continuous(x), _) => json!(x),
                            (AttrValue::Categorical(0), _) => serde_json::Value::Null,
                            (AttrValue::Categorical(k), ColumnData::Categorical { vocab, .. }) => {
                                json!(vocab.get(*k as usize - 1))
                            }
                            (AttrValue::Categorical(k), _) => json!(k),
                        };
                        (col.name.clone(), value)
                    })
                    .collect();
                json!({
                    "id": i,
                    "type": schema.tables[n.node_type].name,
                    "row": n.row,
                    "attributes": attrs,
                })
            })
            .collect();
        let edges: Vec<_> = self
            .edges
            .iter()
            .map(|e| json!([e.src, relation_name(schema, e.relation), e.dst]))
            .collect();
        json!({
            "target_table": schema.target_table_name(),
            "target_row": self.target_row,
            "label": self.label,
            "nodes": nodes,
            "edges": edges,
        })
    }
}

pub fn relation_name(schema: &RdbSchema, r: Relation) -> &str {
    &schema.tables[r.table].columns[r.column].name
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub depth: usize,
    pub fanout_cap: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            depth: 3,
            fanout_cap: 32,
        }
    }
}

/// Breadth-first neighborhood of a target row.
///
/// Edges are followed in both directions. At each expanded node, the
/// unvisited neighbors reached through one `(relation, direction)` group are
/// capped at `fanout_cap` by seeded uniform sampling. Other rows of the target
/// table are never entered, so the target node stays the only one of its type.
pub fn sample_subgraph(
    rdb: &Rdb,
    graph: &RdbGraph,
    target_row: usize,
    depth: usize,
    fanout_cap: usize,
    seed: u64,
) -> Result<Subgraph> {
    let target_table = rdb.schema.target_table;
    let rows = rdb.tables[target_table].row_count;
    if target_row >= rows {
        return Err(Error::InvalidInput(format!(
            "target row {target_row} out of range for {rows} rows of `{}`",
            rdb.schema.target_table_name()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "subgraph", target_row as u64));
    let root = graph.node_id(target_table, target_row);
    let mut local: HashMap<usize, usize> = HashMap::from([(root, 0)]);
    let mut order = vec![root];
    let mut frontier = VecDeque::from([(root, 0usize)]);

    while let Some((node, d)) = frontier.pop_front() {
        if d >= depth {
            continue;
        }
        let mut groups: BTreeMap<(Relation, Direction), Vec<usize>> = BTreeMap::new();
        for &(e, dir) in &graph.incident[node] {
            let edge = graph.edges[e];
            let other = match dir {
                Direction::Out => edge.dst,
                Direction::In => edge.src,
            };
            if local.contains_key(&other) || graph.node_table[other] == target_table {
                continue;
            }
            let group = groups.entry((edge.relation, dir)).or_default();
            if !group.contains(&other) {
                group.push(other);
            }
        }
        for (_, mut candidates) in groups {
            candidates.sort_unstable();
            if candidates.len() > fanout_cap {
                let mut keep = sample(&mut rng, candidates.len(), fanout_cap).into_vec();
                keep.sort_unstable();
                candidates = keep.into_iter().map(|i| candidates[i]).collect();
            }
            for other in candidates {
                if local.contains_key(&other) {
                    continue;
                }
                local.insert(other, order.len());
                order.push(other);
                frontier.push_back((other, d + 1));
            }
        }
    }

    let nodes = order
        .iter()
        .map(|&g| SubgraphNode {
            node_type: graph.node_table[g],
            row: graph.node_row[g],
            attrs: rdb.node_attributes(graph.node_table[g], graph.node_row[g]),
        })
        .collect();
    let mut edges = Vec::new();
    for &g in &order {
        for &(e, dir) in &graph.incident[g] {
            if dir != Direction::Out {
                continue;
            }
            let edge = graph.edges[e];
            if let Some(&dst) = local.get(&edge.dst) {
                edges.push(Edge {
                    src: local[&g],
                    relation: edge.relation,
                    dst,
                });
            }
        }
    }
    Ok(Subgraph {
        target_row,
        nodes,
        edges,
        label: rdb.labels()[target_row],
    })
}

/// One subgraph per target-table row.
pub fn sample_all(rdb: &Rdb, graph: &RdbGraph, cfg: SamplingConfig, seed: u64) -> Result<Vec<Subgraph>> {
    let labels = rdb.labels();
    (0..rdb.tables[rdb.schema.target_table].row_count)
        .map(|r| {
            let mut sg = sample_subgraph(rdb, graph, r, cfg.depth, cfg.fanout_cap, seed)?;
            sg.label = labels[r];
            Ok(sg)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rdb::{load_rdb, load_schema};
    use std::collections::HashSet;
    use std::path::Path;

    fn load(dir: &str) -> Rdb {
        let d = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(dir);
        load_rdb(load_schema(d.join("schema.toml")).unwrap(), &d).unwrap()
    }

    #[test]
    fn toy_graph_counts() {
        let rdb = load("toy");
        let g = build_rdb_graph(&rdb);
        assert_eq!((g.node_count(), g.edge_count()), (13, 10));
    }

    #[test]
    fn null_reference_drops_one_edge() {
        let g = build_rdb_graph(&load("toy_null"));
        assert_eq!((g.node_count(), g.edge_count()), (13, 9));
    }

    #[test]
    fn edges_follow_reference_cells() {
        let rdb = load("toy");
        let g = build_rdb_graph(&rdb);
        // loan 1 (row 0) -> client 1 (row 0)
        let loan1 = g.node_id(1, 0);
        let client1 = g.node_id(0, 0);
        assert!(g.edges.iter().any(|e| e.src == loan1 && e.dst == client1));
        for e in &g.edges {
            let col = &rdb.tables[e.relation.table].columns[e.relation.column];
            let ColumnData::Reference { table, rows } = col else { panic!() };
            assert_eq!(g.node_table[e.dst], *table);
            assert_eq!(rows[g.node_row[e.src]], Some(g.node_row[e.dst]));
        }
    }

    #[test]
    fn depth_zero_is_target_only() {
        let rdb = load("toy");
        let g = build_rdb_graph(&rdb);
        let sg = sample_subgraph(&rdb, &g, 0, 0, 10, 1).unwrap();
        assert_eq!(sg.node_count(), 1);
        assert!(sg.edges.is_empty());
    }

    #[test]
    fn loan_one_depth_one() {
        let rdb = load("toy");
        let g = build_rdb_graph(&rdb);
        let sg = sample_subgraph(&rdb, &g, 0, 1, 10, 1).unwrap();
        assert_eq!((sg.node_count(), sg.edges.len()), (4, 3));
        let mut found: Vec<(usize, usize)> = sg.nodes.iter().map(|n| (n.node_type, n.row)).collect();
        found.sort();
        assert_eq!(found, vec![(0, 0), (1, 0), (2, 0), (2, 1)]);
        assert_eq!(sg.label, Some(true));
    }

    #[test]
    fn fanout_cap_one_keeps_one_payment_per_seed() {
        let rdb = load("toy");
        let g = build_rdb_graph(&rdb);
        let mut seen = HashSet::new();
        for seed in 0..16 {
            let a = sample_subgraph(&rdb, &g, 0, 1, 1, seed).unwrap();
            let b = sample_subgraph(&rdb, &g, 0, 1, 1, seed).unwrap();
            assert_eq!(a, b);
            assert_eq!((a.node_count(), a.edges.len()), (3, 2));
            let payments: Vec<usize> = a.nodes.iter().filter(|n| n.node_type == 2).map(|n| n.row).collect();
            assert_eq!(payments.len(), 1);
            seen.insert(payments[0]);
        }
        // both payments of loan 1 show up across seeds
        assert_eq!(seen.len(), 2);
    }

    #[test]
    fn target_row_out_of_range() {
        let rdb = load("toy");
        let g = build_rdb_graph(&rdb);
        assert!(sample_subgraph(&rdb, &g, 4, 1, 10, 0).is_err());
    }

    #[test]
    fn target_column_never_in_attributes() {
        let rdb = load("toy");
        let g = build_rdb_graph(&rdb);
        let feature_cols = rdb.schema.feature_columns(rdb.schema.target_table);
        assert!(!feature_cols.contains(&rdb.schema.target_column));
        for sg in sample_all(&rdb, &g, SamplingConfig { depth: 4, fanout_cap: 32 }, 3).unwrap() {
            assert_eq!(sg.nodes[0].node_type, rdb.schema.target_table);
            assert_eq!(
                sg.nodes.iter().filter(|n| n.node_type == rdb.schema.target_table).count(),
                1
            );
            assert_eq!(sg.nodes[0].attrs.len(), feature_cols.len());
            let dump = sg.to_json(&rdb).to_string();
            assert!(!dump.contains("\"status\""), "{dump}");
        }
    }

    #[test]
    fn deep_subgraphs_cover_connected_rows() {
        let rdb = load("toy_null");
        let g = build_rdb_graph(&rdb);
        let mut covered = HashSet::new();
        for sg in sample_all(&rdb, &g, SamplingConfig { depth: 100, fanout_cap: usize::MAX }, 0).unwrap() {
            for n in &sg.nodes {
                covered.insert(g.node_id(n.node_type, n.row));
            }
            for e in &sg.edges {
                assert!(e.src < sg.node_count() && e.dst < sg.node_count());
            }
        }
        // payment 6 lost its reference and is unreachable
        let expected: HashSet<usize> = (0..13).filter(|&n| n != g.node_id(2, 5)).collect();
        assert_eq!(covered, expected);
    }
}
