use std::path::Path;

use super::*;
use crate::encoder::{supervised_loss, Backbone, EncoderConfig};
use crate::rdb::{build_rdb_graph, load_rdb, load_schema, sample_subgraph, Rdb};
use crate::tensor::finite_diff_check;

fn toy() -> Rdb {
    let d = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/toy");
    load_rdb(load_schema(d.join("schema.toml")).unwrap(), &d).unwrap()
}

/// The 5-node neighborhood of loan 3 batched with the 2-node one of loan 4.
fn fixture(backbone: Backbone, seed: u64) -> (Encoder, ParamStore, GraphBatch) {
    let rdb = toy();
    let g = build_rdb_graph(&rdb);
    let five = sample_subgraph(&rdb, &g, 2, 1, 32, 0).unwrap();
    assert_eq!(five.node_count(), 5);
    let two = sample_subgraph(&rdb, &g, 3, 1, 32, 0).unwrap();
    let cfg = EncoderConfig {
        backbone,
        layers: 2,
        hidden: 4,
        embed_dim: 2,
        ..EncoderConfig::default()
    };
    let enc = Encoder::new(cfg, FeatureLayout::fit(&rdb, None)).unwrap();
    let mut store = enc.init_params(seed).unwrap();
    init_decoder_params(&enc, &mut store, seed).unwrap();
    (enc, store, GraphBatch::from_subgraphs([&five, &two]))
}

fn check(backbone: Backbone, strategy: Option<Strategy>, seed: u64) -> f64 {
    let cfg = SslConfig {
        mask_rate: 0.5,
        negatives_per_positive: None,
        ..SslConfig::default()
    };
    check_with(backbone, strategy, seed, &cfg)
}

fn check_with(backbone: Backbone, strategy: Option<Strategy>, seed: u64, cfg: &SslConfig) -> f64 {
    let (enc, store, batch) = fixture(backbone, seed);
    let report = finite_diff_check(
        &store,
        |tape, params| match strategy {
            Some(s) => Ok(ssl_loss(tape, params, &enc, s, cfg, &batch, seed)?.0),
            None => {
                let fwd = enc.forward(tape, params, &batch)?;
                let logits = enc.logits(tape, params, &fwd, &batch)?;
                supervised_loss(tape, logits, &batch.labels)
            }
        },
        usize::MAX,
        1e-5,
        seed,
    )
    .unwrap();
    report.max_relative_error
}

#[test]
fn every_loss_matches_finite_differences() {
    let strategies = [
        Some(Strategy::Generative),
        Some(Strategy::InfoGraph),
        Some(Strategy::InfoNode),
        Some(Strategy::Hybrid),
        None,
    ];
    for backbone in [Backbone::Gcn, Backbone::Pna] {
        for s in strategies {
            for seed in 0..3 {
                let err = check(backbone, s, seed);
                assert!(err < 1e-4, "{backbone:?} {s:?} seed {seed}: {err}");
            }
        }
    }
}

#[test]
fn masked_only_denoising_matches_finite_differences() {
    let cfg = SslConfig {
        mask_rate: 0.5,
        reconstruct_all: false,
        ..SslConfig::default()
    };
    for backbone in [Backbone::Gcn, Backbone::Pna] {
        for s in [Strategy::Generative, Strategy::Hybrid] {
            let err = check_with(backbone, Some(s), 1, &cfg);
            assert!(err < 1e-4, "{backbone:?} {s:?}: {err}");
        }
    }
}

#[test]
fn pretraining_loss_ignores_labels() {
    let (enc, store, batch) = fixture(Backbone::Pna, 1);
    let mut flipped = batch.clone();
    flipped.labels = batch.labels.iter().map(|l| l.map(|b| !b)).collect();
    for s in [Strategy::Generative, Strategy::InfoGraph, Strategy::InfoNode, Strategy::Hybrid] {
        let run = |b: &GraphBatch| {
            let mut tape = Tape::new();
            let cfg = SslConfig { mask_rate: 0.5, ..SslConfig::default() };
            let (loss, _) = ssl_loss(&mut tape, &store, &enc, s, &cfg, b, 3).unwrap();
            let grads = tape.backward(loss).unwrap();
            let g: Vec<u64> = tape
                .params()
                .iter()
                .flat_map(|(_, v)| grads.get(*v).map(|t| t.data().to_vec()).unwrap_or_default())
                .map(f64::to_bits)
                .collect();
            (tape.value(loss).item().to_bits(), g)
        };
        assert_eq!(run(&batch), run(&flipped));
        assert_eq!(run(&batch), run(&unlabeled(&batch)));
    }
}

#[test]
fn outcome_reports_pair_counts() {
    let (enc, store, batch) = fixture(Backbone::Gcn, 0);
    let mut tape = Tape::new();
    let cfg = SslConfig::default();
    let (_, out) = ssl_loss(&mut tape, &store, &enc, Strategy::InfoNode, &cfg, &batch, 0).unwrap();
    assert_eq!(out.positives, 14);
    assert_eq!(out.negatives, 14);
    assert!(out.mean_pos_score.is_some() && out.generative.is_none());
    let (_, out) = ssl_loss(&mut tape, &store, &enc, Strategy::Hybrid, &cfg, &batch, 0).unwrap();
    let expected = out.generative.unwrap() + out.contrastive.unwrap();
    assert!((out.total - expected).abs() < 1e-12);
}

#[test]
fn untrained_has_no_loss_and_zero_alphas_fail() {
    let (enc, store, batch) = fixture(Backbone::Gcn, 0);
    let mut tape = Tape::new();
    assert!(ssl_loss(&mut tape, &store, &enc, Strategy::Untrained, &SslConfig::default(), &batch, 0).is_err());
    let cfg = SslConfig {
        alpha0: 0.0,
        alpha1: 0.0,
        ..SslConfig::default()
    };
    assert!(matches!(
        ssl_loss(&mut tape, &store, &enc, Strategy::Hybrid, &cfg, &batch, 0),
        Err(Error::Config(_))
    ));
}

#[test]
fn zero_mask_rate_is_degenerate_unless_reconstructing_all() {
    let (enc, store, batch) = fixture(Backbone::Gcn, 0);
    let mut tape = Tape::new();
    let cfg = SslConfig {
        mask_rate: 0.0,
        reconstruct_all: false,
        ..SslConfig::default()
    };
    assert!(matches!(
        generative_objective(&mut tape, &store, &enc, &batch, &cfg, 0),
        Err(Error::Degenerate(_))
    ));
    let cfg = SslConfig {
        reconstruct_all: true,
        ..cfg
    };
    assert!(generative_objective(&mut tape, &store, &enc, &batch, &cfg, 0).is_ok());
}

#[test]
fn strategy_names_round_trip() {
    for s in Strategy::ALL {
        assert_eq!(s.name().parse::<Strategy>().unwrap(), s);
        assert_eq!(serde_json::to_string(&s).unwrap(), format!("\"{}\"", s.name()));
    }
    assert!("bogus".parse::<Strategy>().is_err());
}
