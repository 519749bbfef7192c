//! Synthetic relational datasets whose information structure is known by construction.
//!
//! * `punctual_trap`: one table. `a00` carries all label information
//!   (`y = 1{a00 > 0}`), while `a01` and `a02` are correlated with each other
//!   and independent of `a00` and `y`.
//! * `xor_trap`: one table with two fair coins `a`, `b` and `y = a XOR b`. No
//!   pair is informative, the triple has co-information of -1 bit.
//! * `graph_mutual_noise`: an `entity` table plus a `link` table of reference
//!   pairs. The label comes from an independent `signal` column; `a0` is
//!   correlated across linked entities and independent of the label.

mod info;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use serde_json::json;

pub use info::{
    co_information, co_information_weighted, mi_binned, mi_discrete, mi_weighted, quantile_bins, DEFAULT_BINS,
};

use crate::error::{Error, Result};
use crate::rdb::{write_records, Rdb, RdbSchema, TableRecords};
use crate::seed::derive_seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TrapSpec {
    PunctualTrap { n: usize, rho: f64 },
    XorTrap { n: usize },
    GraphMutualNoise { n_nodes: usize, edge_prob: f64, rho: f64 },
}

impl TrapSpec {
    pub fn name(&self) -> &'static str {
        match self {
            TrapSpec::PunctualTrap { .. } => "punctual_trap",
            TrapSpec::XorTrap { .. } => "xor_trap",
            TrapSpec::GraphMutualNoise { .. } => "graph_mutual_noise",
        }
    }

    pub fn generate(&self, seed: u64) -> Result<Generated> {
        match *self {
            TrapSpec::PunctualTrap { n, rho } => gen_punctual_trap(n, rho, seed),
            TrapSpec::XorTrap { n } => gen_xor_trap(n, seed),
            TrapSpec::GraphMutualNoise { n_nodes, edge_prob, rho } => gen_graph_mutual_noise(n_nodes, edge_prob, rho, seed),
        }
    }
}

/// A generated dataset in the on-disk layout plus the raw draws.
#[derive(Clone, Debug, PartialEq)]
pub struct Generated {
    pub schema: RdbSchema,
    pub records: Vec<TableRecords>,
    pub labels: Vec<bool>,
    /// Named raw columns of the target table, in row order.
    pub columns: Vec<(String, Vec<f64>)>,
    /// Undirected entity pairs, graph generator only.
    pub edges: Vec<(usize, usize)>,
    pub metadata: serde_json::Value,
}

impl Generated {
    pub fn to_rdb(&self) -> Result<Rdb> {
        Rdb::from_records(self.schema.clone(), &self.records)
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.columns.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_slice())
    }

    /// Writes `schema.toml`, one CSV per table and `metadata.json`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let schema_path = dir.join("schema.toml");
        std::fs::write(&schema_path, self.schema.to_toml()).map_err(|e| Error::io(&schema_path, e))?;
        write_records(&self.schema, &self.records, dir)?;
        let meta_path = dir.join("metadata.json");
        let text = serde_json::to_string_pretty(&self.metadata)?;
        std::fs::write(&meta_path, text + "\n").map_err(|e| Error::io(&meta_path, e))?;
        Ok(())
    }
}

fn check_rho(rho: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::InvalidInput(format!("rho must lie in [0, 1), got {rho}")));
    }
    Ok(())
}

fn check_n(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidInput("row count must be at least 1".into()));
    }
    Ok(())
}

fn gaussian_mi_bits(rho: f64) -> f64 {
    -0.5 * (1.0 - rho * rho).log2()
}

fn label(y: bool) -> String {
    u8::from(y).to_string()
}

fn single_table_schema(name: &str, columns: &[(&str, &str)]) -> RdbSchema {
    let mut text = format!("[target]\ntable = \"{name}\"\ncolumn = \"y\"\n\n[[table]]\nname = \"{name}\"\n");
    for (col, kind) in columns.iter().chain(&[("y", "categorical")]) {
        text += &format!("[[table.column]]\nname = \"{col}\"\nkind = \"{kind}\"\n");
    }
    RdbSchema::parse(&text).expect("generator schema is valid")
}

pub fn gen_punctual_trap(n: usize, rho: f64, seed: u64) -> Result<Generated> {
    check_n(n)?;
    check_rho(rho)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "punctual_trap", 0));
    let s = (1.0 - rho * rho).sqrt();
    let mut cols = [Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n)];
    for _ in 0..n {
        let a00: f64 = rng.sample(StandardNormal);
        let z1: f64 = rng.sample(StandardNormal);
        let z2: f64 = rng.sample(StandardNormal);
        cols[0].push(a00);
        cols[1].push(z1);
        cols[2].push(rho * z1 + s * z2);
    }
    let labels: Vec<bool> = cols[0].iter().map(|&a| a > 0.0).collect();
    let rows = (0..n)
        .map(|i| vec![cols[0][i].to_string(), cols[1][i].to_string(), cols[2][i].to_string(), label(labels[i])])
        .collect();
    let schema = single_table_schema("sample", &[("a00", "continuous"), ("a01", "continuous"), ("a02", "continuous")]);
    let [a00, a01, a02] = cols;
    Ok(Generated {
        schema,
        records: vec![TableRecords {
            header: vec!["a00".into(), "a01".into(), "a02".into(), "y".into()],
            rows,
        }],
        labels,
        columns: vec![("a00".into(), a00), ("a01".into(), a01), ("a02".into(), a02)],
        edges: Vec::new(),
        metadata: json!({
            "generator": "punctual_trap",
            "spec": {"n": n, "rho": rho},
            "seed": seed,
            "roles": {"a00": "punctual signal", "a01,a02": "punctual noise plus shared mutual noise"},
            "analytic_bits": {
                "I(a00;y)": 1.0,
                "I(a01;y)": 0.0,
                "I(a02;y)": 0.0,
                "I(a01;a02)": gaussian_mi_bits(rho),
            },
            "bayes_auc": 1.0,
        }),
    })
}

pub fn gen_xor_trap(n: usize, seed: u64) -> Result<Generated> {
    check_n(n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "xor_trap", 0));
    let mut a = Vec::with_capacity(n);
    let mut b = Vec::with_capacity(n);
    for _ in 0..n {
        a.push(rng.random::<bool>());
        b.push(rng.random::<bool>());
    }
    let labels: Vec<bool> = a.iter().zip(&b).map(|(x, y)| x ^ y).collect();
    let rows = (0..n).map(|i| vec![label(a[i]), label(b[i]), label(labels[i])]).collect();
    let to_f = |v: &[bool]| v.iter().map(|&x| f64::from(u8::from(x))).collect();
    Ok(Generated {
        schema: single_table_schema("sample", &[("a", "categorical"), ("b", "categorical")]),
        records: vec![TableRecords {
            header: vec!["a".into(), "b".into(), "y".into()],
            rows,
        }],
        columns: vec![("a".into(), to_f(&a)), ("b".into(), to_f(&b))],
        labels,
        edges: Vec::new(),
        metadata: json!({
            "generator": "xor_trap",
            "spec": {"n": n},
            "seed": seed,
            "roles": {"a,b": "pairwise independent of y; informative only jointly"},
            "analytic_bits": {"I(a;b)": 0.0, "I(a;y)": 0.0, "I(b;y)": 0.0, "co_information(a;b;y)": -1.0},
        }),
    })
}

/// Erdos-Renyi pairs `i < j`, drawn by geometric skipping over the pair index.
fn erdos_renyi(n: usize, p: f64, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    if p <= 0.0 || n < 2 {
        return edges;
    }
    let total = (n as u128) * (n as u128 - 1) / 2;
    let log_q = (1.0 - p).ln();
    let mut k: u128 = 0;
    loop {
        let u: f64 = rng.random::<f64>();
        let skip = ((1.0 - u).ln() / log_q).floor() as u128;
        k += skip;
        if k >= total {
            break;
        }
        // row-major pair index -> (i, j)
        let kf = k as f64;
        let nf = n as f64;
        let mut i = (nf - 0.5 - ((nf - 0.5).powi(2) - 2.0 * kf).max(0.0).sqrt()).floor() as usize;
        let row_start = |i: usize| (i as u128) * (2 * n as u128 - i as u128 - 1) / 2;
        while i > 0 && row_start(i) > k {
            i -= 1;
        }
        while row_start(i + 1) <= k {
            i += 1;
        }
        let j = i + 1 + (k - row_start(i)) as usize;
        edges.push((i, j));
        k += 1;
    }
    edges
}

/// Linked entities share `a0` through a Gaussian chain along a BFS spanning
/// forest: each child draws `rho * parent + sqrt(1 - rho^2) * noise`, so
/// every tree edge has correlation exactly `rho` and `a0` stays independent of
/// the label, which comes from the separate `signal` column.
pub fn gen_graph_mutual_noise(n_nodes: usize, edge_prob: f64, rho: f64, seed: u64) -> Result<Generated> {
    if n_nodes < 2 {
        return Err(Error::InvalidInput("graph generator needs at least two nodes".into()));
    }
    if !(edge_prob > 0.0 && edge_prob <= 0.1) {
        return Err(Error::InvalidInput(format!("edge_prob must lie in (0, 0.1], got {edge_prob}")));
    }
    check_rho(rho)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "graph_mutual_noise", 0));
    let edges = erdos_renyi(n_nodes, edge_prob, &mut rng);
    let signal: Vec<f64> = (0..n_nodes).map(|_| rng.sample(StandardNormal)).collect();
    let labels: Vec<bool> = signal.iter().map(|&s| s > 0.0).collect();

    let mut adj = vec![Vec::new(); n_nodes];
    for &(i, j) in &edges {
        adj[i].push(j);
        adj[j].push(i);
    }
    let s = (1.0 - rho * rho).sqrt();
    let mut a0 = vec![f64::NAN; n_nodes];
    let mut queue = std::collections::VecDeque::new();
    for root in 0..n_nodes {
        if !a0[root].is_nan() {
            continue;
        }
        a0[root] = rng.sample(StandardNormal);
        queue.push_back(root);
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if a0[v].is_nan() {
                    let eps: f64 = rng.sample(StandardNormal);
                    a0[v] = rho * a0[u] + s * eps;
                    queue.push_back(v);
                }
            }
        }
    }

    let schema = RdbSchema::parse(
        r#"
        [target]
        table = "entity"
        column = "y"

        [[table]]
        name = "entity"
        primary_key = "id"
        [[table.column]]
        name = "signal"
        kind = "continuous"
        [[table.column]]
        name = "a0"
        kind = "continuous"
        [[table.column]]
        name = "y"
        kind = "categorical"

        [[table]]
        name = "link"
        [[table.column]]
        name = "src"
        kind = "reference"
        references = "entity"
        [[table.column]]
        name = "dst"
        kind = "reference"
        references = "entity"
        "#,
    )
    .expect("generator schema is valid");
    let entity = TableRecords {
        header: vec!["id".into(), "signal".into(), "a0".into(), "y".into()],
        rows: (0..n_nodes)
            .map(|i| vec![i.to_string(), signal[i].to_string(), a0[i].to_string(), label(labels[i])])
            .collect(),
    };
    let link = TableRecords {
        header: vec!["src".into(), "dst".into()],
        rows: edges.iter().map(|(i, j)| vec![i.to_string(), j.to_string()]).collect(),
    };
    Ok(Generated {
        schema,
        records: vec![entity, link],
        labels,
        columns: vec![("signal".into(), signal), ("a0".into(), a0)],
        metadata: json!({
            "generator": "graph_mutual_noise",
            "spec": {"n_nodes": n_nodes, "edge_prob": edge_prob, "rho": rho},
            "seed": seed,
            "edges": edges.len(),
            "roles": {"signal": "punctual signal", "a0": "mutual noise shared along links"},
            "analytic_bits": {
                "I(signal;y)": 1.0,
                "I(a0;y)": 0.0,
                "I(a0_i;a0_j | y) for spanning-tree edges": gaussian_mi_bits(rho),
            },
        }),
        edges,
    })
}
