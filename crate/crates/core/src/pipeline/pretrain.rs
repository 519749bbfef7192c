use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::PretrainConfig;
use crate::encoder::{Encoder, GraphBatch};
use crate::error::{Error, Result};
use crate::rdb::Subgraph;
use crate::seed::derive_seed;
use crate::ssl::{init_decoder_params, ssl_loss, Strategy};
use crate::tensor::{AdamConfig, ParamStore, Tape};

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct EpochStat {
    pub epoch: usize,
    pub mean_loss: Option<f64>,
    pub batches: usize,
    pub skipped: usize,
}

/// Splits `rows` into batches of `size`, folding a trailing singleton into
/// the previous batch since the contrastive objectives need two graphs.
pub fn batch_rows(rows: &[usize], size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = rows.chunks(size.max(1)).collect();
    if out.len() >= 2 && out.last().map(|b| b.len()) == Some(1) {
        out.pop();
        let start = rows.len() - 1 - out.last().expect("non-empty").len();
        *out.last_mut().expect("non-empty") = &rows[start..];
    }
    out
}

/// Runs self-supervised pretraining on `store` in place. Labels on the
/// subgraphs are stripped before any batch is built. Decoder parameters used
/// by the generative objective are removed afterwards.
pub fn pretrain(
    encoder: &Encoder,
    store: &mut ParamStore,
    subgraphs: &[Subgraph],
    rows: &[usize],
    strategy: Strategy,
    cfg: &PretrainConfig,
    seed: u64,
) -> Result<Vec<EpochStat>> {
    if strategy == Strategy::Untrained {
        return Ok(Vec::new());
    }
    if rows.is_empty() {
        return Err(Error::InvalidInput("no subgraphs to pretrain on".into()));
    }
    let pool: Vec<Subgraph> = rows.iter().map(|&r| subgraphs[r].without_label()).collect();
    let ssl = cfg.ssl();
    if matches!(strategy, Strategy::Generative | Strategy::Hybrid) {
        init_decoder_params(encoder, store, derive_seed(seed, "decoder", 0))?;
    }
    let adam = AdamConfig::with_lr(cfg.learning_rate);
    let mut order: Vec<usize> = (0..pool.len()).collect();
    let mut stats = Vec::with_capacity(cfg.epochs);
    let mut step = 0u64;
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "pretrain_order", epoch as u64));
        order.shuffle(&mut rng);
        let mut stat = EpochStat {
            epoch,
            ..EpochStat::default()
        };
        let mut total = 0.0;
        for chunk in batch_rows(&order, cfg.batch_size) {
            let batch = GraphBatch::from_subgraphs(chunk.iter().map(|&i| &pool[i]));
            let mut tape = Tape::new();
            let batch_seed = derive_seed(seed, "pretrain_batch", step);
            step += 1;
            let (loss, outcome) = match ssl_loss(&mut tape, store, encoder, strategy, &ssl, &batch, batch_seed) {
                Ok(v) => v,
                Err(Error::Degenerate(msg)) => {
                    debug!("epoch {epoch}: skipping batch: {msg}");
                    stat.skipped += 1;
                    continue;
                }
                Err(e) => return Err(e),
            };
            tape.backward_into(loss, store)?;
            store.adam_step(&adam)?;
            total += outcome.total;
            stat.batches += 1;
        }
        stat.mean_loss = (stat.batches > 0).then(|| total / stat.batches as f64);
        if epoch % 50 == 0 || epoch + 1 == cfg.epochs {
            info!(
                "{strategy} seed {seed} epoch {epoch}: loss {:?} over {} batches ({} skipped)",
                stat.mean_loss, stat.batches, stat.skipped
            );
        }
        stats.push(stat);
    }
    store.retain(|name| !name.starts_with("decoder."));
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{EncoderConfig, FeatureLayout};
    use crate::rdb::{build_rdb_graph, sample_all, SamplingConfig};

    #[test]
    fn batching_folds_singleton() {
        let rows: Vec<usize> = (0..9).collect();
        let b = batch_rows(&rows, 4);
        assert_eq!(b, vec![&rows[0..4], &rows[4..9]]);
        assert_eq!(batch_rows(&rows, 3).len(), 3);
        assert_eq!(batch_rows(&rows[..1], 4), vec![&rows[..1]]);
    }

    fn setup() -> (Encoder, Vec<Subgraph>) {
        let rdb = crate::synth::gen_punctual_trap(40, 0.5, 3).unwrap().to_rdb().unwrap();
        let graph = build_rdb_graph(&rdb);
        let subgraphs = sample_all(&rdb, &graph, SamplingConfig::default(), 0).unwrap();
        let cfg = EncoderConfig {
            layers: 2,
            hidden: 8,
            ..EncoderConfig::default()
        };
        (Encoder::new(cfg, FeatureLayout::fit(&rdb, None)).unwrap(), subgraphs)
    }

    fn small_cfg() -> PretrainConfig {
        PretrainConfig {
            epochs: 3,
            batch_size: 8,
            learning_rate: 1e-2,
            mask_rate: 0.5,
            ..PretrainConfig::default()
        }
    }

    #[test]
    fn untrained_leaves_params_alone() {
        let (enc, sgs) = setup();
        let init = enc.init_params(1).unwrap();
        let mut store = init.clone();
        let rows: Vec<usize> = (0..sgs.len()).collect();
        let log = pretrain(&enc, &mut store, &sgs, &rows, Strategy::Untrained, &small_cfg(), 1).unwrap();
        assert!(log.is_empty());
        assert_eq!(store, init);
    }

    #[test]
    fn every_strategy_moves_params_and_drops_decoder() {
        let (enc, sgs) = setup();
        let rows: Vec<usize> = (0..sgs.len()).collect();
        let init = enc.init_params(1).unwrap();
        for strategy in [Strategy::Generative, Strategy::InfoGraph, Strategy::InfoNode, Strategy::Hybrid] {
            let mut store = init.clone();
            let log = pretrain(&enc, &mut store, &sgs, &rows, strategy, &small_cfg(), 1).unwrap();
            assert_eq!(log.len(), 3);
            assert!(log.iter().all(|s| s.batches + s.skipped == 5), "{strategy}: {log:?}");
            assert!(store.names().all(|n| !n.starts_with("decoder.")));
            assert_eq!(store.names().collect::<Vec<_>>(), init.names().collect::<Vec<_>>());
            assert_ne!(store.values_only(), init, "{strategy}");
        }
    }

    #[test]
    fn labels_do_not_reach_pretraining() {
        let (enc, sgs) = setup();
        let flipped: Vec<Subgraph> = sgs
            .iter()
            .map(|s| Subgraph {
                label: s.label.map(|y| !y),
                ..s.clone()
            })
            .collect();
        let rows: Vec<usize> = (0..sgs.len()).collect();
        for strategy in [Strategy::Generative, Strategy::InfoNode, Strategy::Hybrid] {
            let mut a = enc.init_params(2).unwrap();
            let mut b = a.clone();
            pretrain(&enc, &mut a, &sgs, &rows, strategy, &small_cfg(), 2).unwrap();
            pretrain(&enc, &mut b, &flipped, &rows, strategy, &small_cfg(), 2).unwrap();
            assert_eq!(a, b, "{strategy}");
        }
    }
}
