//! Fast built-in checks for the `selftest` subcommand.

use std::f64::consts::LN_2;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::encoder::{supervised_loss, Backbone, Encoder, EncoderConfig, FeatureLayout, GraphBatch};
use crate::error::Result;
use crate::eval::roc_auc;
use crate::rdb::{build_rdb_graph, sample_subgraph, Rdb, RdbSchema, TableRecords};
use crate::ssl::{init_decoder_params, ssl_loss, SslConfig, Strategy};
use crate::synth::{co_information_weighted, mi_weighted};
use crate::tensor::{finite_diff_check, ParamStore, Tape, Tensor};

const TOY_SCHEMA: &str = include_str!("../../fixtures/toy/schema.toml");
const TOY_TABLES: [&str; 3] = [
    include_str!("../../fixtures/toy/client.csv"),
    include_str!("../../fixtures/toy/loan.csv"),
    include_str!("../../fixtures/toy/payment.csv"),
];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SelfCheck {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn toy() -> Result<Rdb> {
    let schema = RdbSchema::parse(TOY_SCHEMA)?;
    let records = TOY_TABLES
        .iter()
        .map(|text| {
            let mut r = csv::Reader::from_reader(text.as_bytes());
            let header = r.headers()?.iter().map(String::from).collect();
            let rows = r
                .records()
                .map(|rec| rec.map(|rec| rec.iter().map(String::from).collect()))
                .collect::<std::result::Result<_, _>>()?;
            Ok(TableRecords { header, rows })
        })
        .collect::<Result<Vec<_>>>()?;
    Rdb::from_records(schema, &records)
}

fn fixture(backbone: Backbone, seed: u64) -> Result<(Encoder, ParamStore, GraphBatch)> {
    let rdb = toy()?;
    let g = build_rdb_graph(&rdb);
    let five = sample_subgraph(&rdb, &g, 2, 1, 32, 0)?;
    let two = sample_subgraph(&rdb, &g, 3, 1, 32, 0)?;
    let cfg = EncoderConfig {
        backbone,
        layers: 2,
        hidden: 4,
        embed_dim: 2,
        ..EncoderConfig::default()
    };
    let enc = Encoder::new(cfg, FeatureLayout::fit(&rdb, None))?;
    let mut store = enc.init_params(seed)?;
    init_decoder_params(&enc, &mut store, seed)?;
    Ok((enc, store, GraphBatch::from_subgraphs([&five, &two])))
}

fn gradient_check() -> Result<(bool, String)> {
    let cfg = SslConfig {
        mask_rate: 0.5,
        negatives_per_positive: None,
        ..SslConfig::default()
    };
    let mut worst: f64 = 0.0;
    for backbone in [Backbone::Gcn, Backbone::Pna] {
        let (enc, store, batch) = fixture(backbone, 0)?;
        for strategy in [None, Some(Strategy::Generative), Some(Strategy::InfoNode), Some(Strategy::Hybrid)] {
            let report = finite_diff_check(
                &store,
                |tape, params| match strategy {
                    Some(s) => Ok(ssl_loss(tape, params, &enc, s, &cfg, &batch, 0)?.0),
                    None => {
                        let fwd = enc.forward(tape, params, &batch)?;
                        let logits = enc.logits(tape, params, &fwd, &batch)?;
                        supervised_loss(tape, logits, &batch.labels)
                    }
                },
                64,
                1e-5,
                0,
            )?;
            worst = worst.max(report.max_relative_error);
        }
    }
    Ok((worst < 1e-4, format!("max relative error {worst:.3e}")))
}

fn zero_score_baselines() -> Result<(bool, String)> {
    let (enc, store, batch) = fixture(Backbone::Gcn, 0)?;
    let mut zero = ParamStore::new();
    for (name, t) in store.iter() {
        zero.insert(name, Tensor::zeros(t.shape()))?;
    }
    let cfg = SslConfig::default();
    let mut tape = Tape::new();
    let (_, ig) = ssl_loss(&mut tape, &zero, &enc, Strategy::InfoGraph, &cfg, &batch, 0)?;
    let (_, inode) = ssl_loss(&mut tape, &zero, &enc, Strategy::InfoNode, &cfg, &batch, 0)?;
    let ok = (ig.total - 2.0 * LN_2).abs() < 1e-9 && (inode.total - 4.0 * LN_2).abs() < 1e-9;
    Ok((ok, format!("infograph {:.12}, infonode {:.12}", ig.total, inode.total)))
}

fn auc_oracle() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for case in 0..20 {
        let n = rng.random_range(2..200);
        let scores: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0..8u8))).collect();
        let mut labels: Vec<bool> = (0..n).map(|_| rng.random::<bool>()).collect();
        labels[0] = true;
        labels[1] = false;
        let mut twice = 0u64;
        let mut pairs = 0u64;
        for i in (0..n).filter(|&i| labels[i]) {
            for j in (0..n).filter(|&j| !labels[j]) {
                pairs += 1;
                twice += match scores[i].partial_cmp(&scores[j]) {
                    Some(std::cmp::Ordering::Greater) => 2,
                    Some(std::cmp::Ordering::Equal) => 1,
                    _ => 0,
                };
            }
        }
        let expected = twice as f64 / (2 * pairs) as f64;
        let got = roc_auc(&scores, &labels)?;
        if got != expected {
            return Ok((false, format!("case {case}: {got} vs {expected}")));
        }
    }
    Ok((true, "20 tied instances match the pairwise oracle".into()))
}

fn toy_graph() -> Result<(bool, String)> {
    let rdb = toy()?;
    let g = build_rdb_graph(&rdb);
    let sg = sample_subgraph(&rdb, &g, 0, 1, 32, 0)?;
    let got = (g.node_count(), g.edge_count(), sg.node_count(), sg.edges.len());
    Ok((got == (13, 10, 4, 3), format!("graph {}/{}, loan 1 depth 1 {}/{}", got.0, got.1, got.2, got.3)))
}

fn xor_information() -> Result<(bool, String)> {
    let x = [0, 0, 1, 1];
    let y = [0, 1, 0, 1];
    let z = [0, 1, 1, 0];
    let w = [0.25; 4];
    let pair = mi_weighted(&x, &y, &w)?.max(mi_weighted(&x, &z, &w)?).max(mi_weighted(&y, &z, &w)?);
    let co = co_information_weighted(&x, &y, &z, &w)?;
    Ok((pair < 1e-12 && (co + 1.0).abs() < 1e-12, format!("max pairwise MI {pair:e}, co-information {co}")))
}

/// Runs every check; an internal error counts as a failure.
pub fn selftest() -> Vec<SelfCheck> {
    let checks: [(&'static str, fn() -> Result<(bool, String)>); 5] = [
        ("gradient oracle", gradient_check),
        ("contrastive zero-score baselines", zero_score_baselines),
        ("roc-auc oracle", auc_oracle),
        ("toy relational graph", toy_graph),
        ("xor co-information", xor_information),
    ];
    checks
        .into_iter()
        .map(|(name, f)| match f() {
            Ok((passed, detail)) => SelfCheck { name, passed, detail },
            Err(e) => SelfCheck {
                name,
                passed: false,
                detail: e.to_string(),
            },
        })
        .collect()
}
