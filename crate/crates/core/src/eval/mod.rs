//! Frozen-encoder probing, fine-tuning, ROC-AUC and negative-transfer reporting.

mod auc;
mod probe;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use auc::roc_auc;
pub use probe::{fit_linear_probe, LinearProbe, ProbeConfig};

use crate::encoder::{supervised_loss, Encoder, GraphBatch};
use crate::error::{Error, Result};
use crate::rdb::{stratified_split, Subgraph};
use crate::seed::derive_seed;
use crate::tensor::{AdamConfig, ParamStore, Tape, Tensor};

/// Subgraphs encoded per forward pass during extraction.
const EXTRACT_BATCH: usize = 64;

/// Fixed test holdout plus the pool S% subsamples are drawn from.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SplitPlan {
    pub labels: Vec<bool>,
    /// Target rows with a label, in row order.
    pub labeled: Vec<usize>,
    pub test: Vec<usize>,
    pub train_pool: Vec<usize>,
}

impl SplitPlan {
    pub fn new(labels: &[Option<bool>], test_percent: f64, split_seed: u64) -> Result<Self> {
        let labeled: Vec<usize> = (0..labels.len()).filter(|&i| labels[i].is_some()).collect();
        let lab: Vec<bool> = labeled.iter().map(|&i| labels[i] == Some(true)).collect();
        let test_local = stratified_split(&lab, test_percent, derive_seed(split_seed, "holdout", 0))?;
        let test: Vec<usize> = test_local.iter().map(|&i| labeled[i]).collect();
        let train_pool: Vec<usize> = labeled.iter().copied().filter(|r| test.binary_search(r).is_err()).collect();
        Ok(SplitPlan {
            labels: labels.iter().map(|l| *l == Some(true)).collect(),
            labeled,
            test,
            train_pool,
        })
    }

    /// Stratified S% of the training pool for one seed.
    pub fn train_subsample(&self, s_percent: f64, seed: u64) -> Result<Vec<usize>> {
        let lab: Vec<bool> = self.train_pool.iter().map(|&r| self.labels[r]).collect();
        let idx = stratified_split(&lab, s_percent, derive_seed(seed, "train_subsample", 0))?;
        Ok(idx.into_iter().map(|i| self.train_pool[i]).collect())
    }

    pub fn test_labels(&self) -> Vec<bool> {
        self.test.iter().map(|&r| self.labels[r]).collect()
    }
}

/// One representation row per subgraph (graph embedding or target node,
/// per the encoder config). Parameters are only read.
pub fn extract_representations(encoder: &Encoder, store: &ParamStore, subgraphs: &[Subgraph]) -> Result<Tensor> {
    let mut data = Vec::with_capacity(subgraphs.len() * encoder.config.hidden);
    for chunk in subgraphs.chunks(EXTRACT_BATCH) {
        let batch = GraphBatch::from_subgraphs(chunk);
        let mut tape = Tape::new();
        let fwd = encoder.forward(&mut tape, store, &batch).map_err(checkpoint_mismatch)?;
        let x = encoder.prediction_input(&mut tape, &fwd, &batch)?;
        data.extend_from_slice(tape.value(x).data());
    }
    Tensor::new(vec![subgraphs.len(), encoder.config.hidden], data)
}

fn checkpoint_mismatch(e: Error) -> Error {
    match e {
        Error::InvalidInput(msg) if msg.starts_with("unknown parameter") => {
            Error::Checkpoint(format!("checkpoint does not match encoder config: {msg}"))
        }
        Error::Shape { op, detail } => Error::Checkpoint(format!("checkpoint shape mismatch in {op}: {detail}")),
        other => other,
    }
}

/// Fits a probe on the S% subsample for `seed` and scores the holdout.
pub fn probe_auc(features: &Tensor, plan: &SplitPlan, s_percent: f64, seed: u64, cfg: &ProbeConfig) -> Result<f64> {
    let train = plan.train_subsample(s_percent, seed)?;
    let probe = fit_linear_probe(features, &plan.labels, &train, cfg)?;
    roc_auc(&probe.scores(features, &plan.test), &plan.test_labels())
}

/// Identifies one grid cell of a report.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ReportKey {
    pub dataset: String,
    pub backbone: String,
    pub strategy: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub dataset: String,
    pub backbone: String,
    pub strategy: String,
    #[serde(rename = "S")]
    pub s: f64,
    pub seed: u64,
    pub probe_auc: f64,
    pub finetune_auc: Option<f64>,
    pub delta_vs_untrained: Option<f64>,
}

/// Probe rows for one frozen checkpoint over several subsample seeds.
pub fn run_linear_probing(
    encoder: &Encoder,
    store: &ParamStore,
    subgraphs: &[Subgraph],
    plan: &SplitPlan,
    key: &ReportKey,
    s_percent: f64,
    seeds: &[u64],
    cfg: &ProbeConfig,
) -> Result<Vec<MetricsRow>> {
    let features = extract_representations(encoder, store, subgraphs)?;
    seeds
        .iter()
        .map(|&seed| {
            Ok(MetricsRow {
                dataset: key.dataset.clone(),
                backbone: key.backbone.clone(),
                strategy: key.strategy.clone(),
                s: s_percent,
                seed,
                probe_auc: probe_auc(&features, plan, s_percent, seed, cfg)?,
                finetune_auc: None,
                delta_vs_untrained: None,
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FineTuneConfig {
    pub enabled: bool,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for FineTuneConfig {
    fn default() -> Self {
        FineTuneConfig {
            enabled: false,
            learning_rate: 1e-3,
            epochs: 20,
            batch_size: 32,
        }
    }
}

fn head_scores(encoder: &Encoder, store: &ParamStore, subgraphs: &[Subgraph], rows: &[usize]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(rows.len());
    for chunk in rows.chunks(EXTRACT_BATCH) {
        let batch = GraphBatch::from_subgraphs(chunk.iter().map(|&r| &subgraphs[r]));
        let mut tape = Tape::new();
        let fwd = encoder.forward(&mut tape, store, &batch)?;
        let logits = encoder.logits(&mut tape, store, &fwd, &batch)?;
        out.extend_from_slice(tape.value(logits).data());
    }
    Ok(out)
}

/// Trains encoder and head jointly with Adam on the S% subsample, then
/// returns the test ROC-AUC of the head. `subgraphs[r]` must belong to target row `r`.
pub fn fine_tune(
    encoder: &Encoder,
    checkpoint: &ParamStore,
    subgraphs: &[Subgraph],
    plan: &SplitPlan,
    s_percent: f64,
    seed: u64,
    cfg: &FineTuneConfig,
) -> Result<(f64, ParamStore)> {
    let mut store = checkpoint.values_only();
    let mut train = plan.train_subsample(s_percent, seed)?;
    let adam = AdamConfig::with_lr(cfg.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "fine_tune", 0));
    for _ in 0..cfg.epochs {
        train.shuffle(&mut rng);
        for chunk in train.chunks(cfg.batch_size.max(1)) {
            let batch = GraphBatch::from_subgraphs(chunk.iter().map(|&r| &subgraphs[r]));
            let labels: Vec<Option<bool>> = chunk.iter().map(|&r| Some(plan.labels[r])).collect();
            let mut tape = Tape::new();
            let fwd = encoder.forward(&mut tape, &store, &batch)?;
            let logits = encoder.logits(&mut tape, &store, &fwd, &batch)?;
            let loss = supervised_loss(&mut tape, logits, &labels)?;
            tape.backward_into(loss, &mut store)?;
            store.adam_step(&adam)?;
        }
    }
    let scores = head_scores(encoder, &store, subgraphs, &plan.test)?;
    Ok((roc_auc(&scores, &plan.test_labels())?, store))
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferSummary {
    pub dataset: String,
    pub backbone: String,
    pub strategy: String,
    #[serde(rename = "S")]
    pub s: f64,
    pub seeds: usize,
    pub mean_auc: f64,
    pub std_auc: f64,
    pub untrained_mean_auc: f64,
    pub delta: f64,
    pub negative_transfer: bool,
}

type CellKey = (String, String, u64);

fn cell(row: &MetricsRow) -> CellKey {
    (row.dataset.clone(), row.backbone.clone(), row.s.to_bits())
}

fn untrained_means(untrained: &[MetricsRow]) -> BTreeMap<CellKey, f64> {
    let mut groups: BTreeMap<CellKey, Vec<f64>> = BTreeMap::new();
    for r in untrained {
        groups.entry(cell(r)).or_default().push(r.probe_auc);
    }
    groups.into_iter().map(|(k, v)| (k, mean_std(&v).0)).collect()
}

/// Per (dataset, backbone, strategy, S): mean probe AUC minus the untrained
/// mean for the same (dataset, backbone, S), flagged when negative.
pub fn negative_transfer_report(strategy_rows: &[MetricsRow], untrained_rows: &[MetricsRow]) -> Result<Vec<TransferSummary>> {
    let base = untrained_means(untrained_rows);
    let mut groups: BTreeMap<(CellKey, String), Vec<f64>> = BTreeMap::new();
    for r in strategy_rows {
        groups.entry((cell(r), r.strategy.clone())).or_default().push(r.probe_auc);
    }
    groups
        .into_iter()
        .map(|((key, strategy), aucs)| {
            let untrained = *base.get(&key).ok_or_else(|| {
                Error::InvalidInput(format!(
                    "no untrained rows for dataset `{}`, backbone `{}`, S = {}",
                    key.0,
                    key.1,
                    f64::from_bits(key.2)
                ))
            })?;
            let (mean, std) = mean_std(&aucs);
            let delta = mean - untrained;
            Ok(TransferSummary {
                dataset: key.0,
                backbone: key.1,
                strategy,
                s: f64::from_bits(key.2),
                seeds: aucs.len(),
                mean_auc: mean,
                std_auc: std,
                untrained_mean_auc: untrained,
                delta,
                negative_transfer: delta < 0.0,
            })
        })
        .collect()
}

/// Fills `delta_vs_untrained` on every row that has an untrained reference.
pub fn attach_deltas(rows: &mut [MetricsRow]) {
    let untrained: Vec<MetricsRow> = rows.iter().filter(|r| r.strategy == "untrained").cloned().collect();
    let base = untrained_means(&untrained);
    for r in rows.iter_mut() {
        r.delta_vs_untrained = base.get(&cell(r)).map(|u| r.probe_auc - u);
    }
}
