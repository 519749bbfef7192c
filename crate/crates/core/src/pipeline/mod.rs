//! Config-driven orchestration: ingest or synthesize, pretrain, probe and
//! fine-tune, report, with every artifact written under one output directory.

mod checkpoint;
mod config;
mod metrics;
mod pretrain;
mod selftest;

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use log::info;
use serde::{Deserialize, Serialize};

pub use checkpoint::{Checkpoint, CheckpointHeader};
pub use config::{SamplingSection, DataConfig, EvalConfig, ExperimentConfig, PretrainConfig, RunConfig};
pub use metrics::{append_index, emit_metrics, read_metrics_jsonl, EmittedFiles, METRICS_COLUMNS};
pub use pretrain::{batch_rows, pretrain, EpochStat};
pub use selftest::{selftest, SelfCheck};

use crate::encoder::{oversmoothing, Backbone, Encoder, FeatureLayout, GraphBatch};
use crate::error::{Error, Result};
use crate::eval::{
    extract_representations, fine_tune, negative_transfer_report, probe_auc, attach_deltas, MetricsRow, SplitPlan,
    TransferSummary,
};
use crate::rdb::{build_rdb_graph, load_rdb, load_schema, sample_all, Rdb, Subgraph};
use crate::ssl::Strategy;
use crate::synth::Generated;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Stages the CLI can run on their own.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Ingest,
    Synth,
    Pretrain,
    Probe,
    Finetune,
    Report,
    Run,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Synth => "synth",
            Stage::Pretrain => "pretrain",
            Stage::Probe => "probe",
            Stage::Finetune => "finetune",
            Stage::Report => "report",
            Stage::Run => "run",
        }
    }
}

fn in_stage<T>(stage: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Stage { .. } => e,
        other => Error::Stage {
            stage,
            source: Box::new(other),
        },
    })
}

/// Loaded data, sampled subgraphs and the fixed evaluation split.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub dataset: String,
    pub rdb: Rdb,
    pub generated: Option<Generated>,
    pub subgraphs: Vec<Subgraph>,
    pub plan: SplitPlan,
    /// Target rows outside the test holdout, labeled or not.
    pub pretrain_rows: Vec<usize>,
    pub layout: FeatureLayout,
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    let (rdb, generated) = match (&cfg.data.trap, cfg.schema_path()) {
        (Some(trap), _) => {
            let g = trap.generate(cfg.data.seed)?;
            (g.to_rdb()?, Some(g))
        }
        (None, Some(schema)) => {
            let schema = load_schema(schema)?;
            (load_rdb(schema, cfg.data.csv_dir.as_ref().expect("validated"))?, None)
        }
        (None, None) => return Err(Error::Config("no data source".into())),
    };
    let graph = build_rdb_graph(&rdb);
    let subgraphs = sample_all(&rdb, &graph, cfg.sampling(), cfg.data.seed)?;
    let plan = SplitPlan::new(&rdb.labels(), cfg.eval.test_percent, cfg.data.seed)?;
    let pretrain_rows: Vec<usize> = (0..subgraphs.len()).filter(|r| plan.test.binary_search(r).is_err()).collect();
    let layout = FeatureLayout::fit(&rdb, Some(&pretrain_rows));
    info!(
        "{}: {} nodes, {} edges, {} subgraphs, {} test rows",
        cfg.dataset_name(),
        graph.node_count(),
        graph.edge_count(),
        subgraphs.len(),
        plan.test.len()
    );
    Ok(Prepared {
        dataset: cfg.dataset_name(),
        rdb,
        generated,
        subgraphs,
        plan,
        pretrain_rows,
        layout,
    })
}

/// One (backbone, strategy, seed) cell of the grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Cell {
    pub backbone: Backbone,
    pub strategy: Strategy,
    pub seed: u64,
}

pub fn grid(cfg: &ExperimentConfig) -> Vec<Cell> {
    let mut out = Vec::new();
    for backbone in cfg.backbones() {
        for &strategy in &cfg.run.strategies {
            for &seed in &cfg.run.seeds {
                out.push(Cell { backbone, strategy, seed });
            }
        }
    }
    out
}

pub fn checkpoint_path(out: &Path, cell: &Cell) -> PathBuf {
    out.join("checkpoints")
        .join(cell.backbone.name())
        .join(cell.strategy.name())
        .join(format!("seed-{}.ckpt", cell.seed))
}

pub fn encoder_for(cfg: &ExperimentConfig, layout: &FeatureLayout, backbone: Backbone) -> Result<Encoder> {
    let mut ec = cfg.encoder.clone();
    ec.backbone = backbone;
    Encoder::new(ec, layout.clone())
}

/// Seeded init followed by pretraining for one cell. The untrained strategy
/// returns the init itself.
pub fn train_cell(cfg: &ExperimentConfig, prep: &Prepared, cell: &Cell) -> Result<(Checkpoint, Vec<EpochStat>)> {
    let encoder = encoder_for(cfg, &prep.layout, cell.backbone)?;
    let mut params = encoder.init_params(cell.seed)?;
    let log = pretrain(
        &encoder,
        &mut params,
        &prep.subgraphs,
        &prep.pretrain_rows,
        cell.strategy,
        &cfg.pretrain,
        cell.seed,
    )?;
    let header = CheckpointHeader {
        encoder,
        strategy: cell.strategy,
        seed: cell.seed,
        optimizer_steps: params.step_count(),
    };
    Ok((Checkpoint { header, params }, log))
}

/// Probe rows (and fine-tune AUCs when enabled) for one checkpoint over the S grid.
pub fn evaluate_cell(
    cfg: &ExperimentConfig,
    prep: &Prepared,
    cell: &Cell,
    ck: &Checkpoint,
    finetune: bool,
) -> Result<Vec<MetricsRow>> {
    let encoder = &ck.header.encoder;
    let features = extract_representations(encoder, &ck.params, &prep.subgraphs)?;
    let mut rows = Vec::with_capacity(cfg.eval.s_percent.len());
    for &s in &cfg.eval.s_percent {
        let probe = probe_auc(&features, &prep.plan, s, cell.seed, &cfg.eval.probe)?;
        let finetune_auc = if finetune {
            Some(fine_tune(encoder, &ck.params, &prep.subgraphs, &prep.plan, s, cell.seed, &cfg.eval.finetune)?.0)
        } else {
            None
        };
        rows.push(MetricsRow {
            dataset: prep.dataset.clone(),
            backbone: cell.backbone.name().into(),
            strategy: cell.strategy.name().into(),
            s,
            seed: cell.seed,
            probe_auc: probe,
            finetune_auc,
            delta_vs_untrained: None,
        });
    }
    Ok(rows)
}

/// Mean per-layer cosine similarity within multi-node subgraphs of the
/// first pretraining batch.
fn oversmoothing_profile(prep: &Prepared, ck: &Checkpoint) -> Result<Vec<Option<f64>>> {
    let rows: Vec<usize> = prep.pretrain_rows.iter().copied().take(64).collect();
    let batch = GraphBatch::from_subgraphs(rows.iter().map(|&r| &prep.subgraphs[r]));
    let reps = ck.header.encoder.encode_batch(&ck.params, &batch)?;
    Ok(oversmoothing(&reps, &batch))
}

pub fn worker_count(cfg: &ExperimentConfig) -> usize {
    cfg.run
        .workers
        .or_else(|| std::env::var("RDBSSL_WORKERS").ok().and_then(|v| v.parse().ok()))
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .max(1)
}

/// Maps `f` over `items` on up to `workers` threads; results keep input order.
pub fn par_map<T: Sync, R: Send>(items: &[T], workers: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers.min(items.len()).max(1) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                slots.lock().expect("no worker panicked")[i] = Some(r);
            });
        }
    });
    slots.into_inner().expect("no worker panicked").into_iter().map(|r| r.expect("every item ran")).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointEntry {
    pub backbone: String,
    pub strategy: String,
    pub seed: u64,
    pub path: PathBuf,
    pub sha256: String,
    pub optimizer_steps: u64,
    pub final_loss: Option<f64>,
    pub oversmoothing: Vec<Option<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub config_hash: String,
    pub dataset: String,
    pub output_dir: PathBuf,
    pub checkpoints: Vec<CheckpointEntry>,
    pub metrics_csv: PathBuf,
    pub metrics_jsonl: PathBuf,
    pub report_json: PathBuf,
    pub report_csv: PathBuf,
    pub logs: PathBuf,
    pub index: PathBuf,
    /// Wall-clock seconds per stage.
    pub timings: Vec<(String, f64)>,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn failed_marker(out: &Path) -> PathBuf {
    out.join("FAILED")
}

/// Runs one stage (or the whole pipeline) and records a `FAILED` marker under
/// the output directory on error. Artifacts written before the failure stay.
pub fn execute(cfg: &ExperimentConfig, stage: Stage) -> Result<Option<RunManifest>> {
    let out = cfg.run.output.clone();
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let marker = failed_marker(&out);
    if marker.exists() {
        std::fs::remove_file(&marker).map_err(|e| Error::io(&marker, e))?;
    }
    let result = match stage {
        Stage::Run => run_pipeline(cfg).map(Some),
        Stage::Ingest => stage_ingest(cfg).map(|_| None),
        Stage::Synth => stage_synth(cfg).map(|_| None),
        Stage::Pretrain => {
            let prep = in_stage("ingest", prepare(cfg))?;
            stage_pretrain(cfg, &prep).map(|_| None)
        }
        Stage::Probe | Stage::Finetune => {
            let prep = in_stage("ingest", prepare(cfg))?;
            stage_evaluate(cfg, &prep, stage == Stage::Finetune).map(|_| None)
        }
        Stage::Report => stage_report(cfg).map(|_| None),
    };
    if let Err(e) = &result {
        let (name, cause) = match e {
            Error::Stage { stage, source } => (*stage, source.to_string()),
            other => (stage.name(), other.to_string()),
        };
        let text = format!("stage: {name}\nerror: {cause}\n");
        std::fs::write(&marker, text).map_err(|e| Error::io(&marker, e))?;
    }
    result
}

fn stage_ingest(cfg: &ExperimentConfig) -> Result<Prepared> {
    let out = &cfg.run.output;
    let prep = in_stage("ingest", prepare(cfg))?;
    in_stage("ingest", write_ingest(out, &prep))?;
    Ok(prep)
}

fn write_ingest(out: &Path, prep: &Prepared) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let path = out.join("subgraphs.jsonl");
    let mut text = String::new();
    for sg in &prep.subgraphs {
        text += &serde_json::to_string(&sg.to_json(&prep.rdb))?;
        text.push('\n');
    }
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    write_json(
        &out.join("split.json"),
        &serde_json::json!({"test": prep.plan.test, "train_pool": prep.plan.train_pool}),
    )?;
    write_json(&out.join("layout.json"), &prep.layout)
}

fn stage_synth(cfg: &ExperimentConfig) -> Result<()> {
    let trap = cfg
        .data
        .trap
        .as_ref()
        .ok_or_else(|| Error::Config("the synth stage needs a [data.trap] source".into()));
    let trap = in_stage("synth", trap)?;
    let g = in_stage("synth", trap.generate(cfg.data.seed))?;
    in_stage("synth", g.write(cfg.run.output.join("data")))
}

fn stage_pretrain(cfg: &ExperimentConfig, prep: &Prepared) -> Result<Vec<(Cell, Checkpoint, CheckpointEntry)>> {
    let out = &cfg.run.output;
    let cells = grid(cfg);
    let trained = par_map(&cells, worker_count(cfg), |cell| -> Result<_> {
        info!("pretraining {} / {} / seed {}", cell.backbone.name(), cell.strategy, cell.seed);
        let (ck, log) = train_cell(cfg, prep, cell)?;
        let path = checkpoint_path(out, cell);
        let sha256 = ck.save(&path)?;
        let entry = CheckpointEntry {
            backbone: cell.backbone.name().into(),
            strategy: cell.strategy.name().into(),
            seed: cell.seed,
            path: path.strip_prefix(out).unwrap_or(&path).to_path_buf(),
            sha256,
            optimizer_steps: ck.header.optimizer_steps,
            final_loss: log.last().and_then(|s| s.mean_loss),
            oversmoothing: oversmoothing_profile(prep, &ck)?,
        };
        Ok((*cell, ck, entry, log))
    });
    let trained = in_stage("pretrain", trained.into_iter().collect::<Result<Vec<_>>>())?;
    let logs: Vec<_> = trained
        .iter()
        .map(|(_, _, e, log)| serde_json::json!({"backbone": e.backbone, "strategy": e.strategy, "seed": e.seed, "epochs": log}))
        .collect();
    in_stage("pretrain", write_json(&out.join("pretrain_log.json"), &logs))?;
    Ok(trained.into_iter().map(|(c, ck, e, _)| (c, ck, e)).collect())
}

fn report(rows: &mut [MetricsRow]) -> Result<Vec<TransferSummary>> {
    attach_deltas(rows);
    let (untrained, others): (Vec<MetricsRow>, Vec<MetricsRow>) =
        rows.iter().cloned().partition(|r| r.strategy == Strategy::Untrained.name());
    if untrained.is_empty() {
        log::warn!("no untrained rows, so no negative-transfer report");
        return Ok(Vec::new());
    }
    negative_transfer_report(&others, &untrained)
}

fn evaluate_all(
    cfg: &ExperimentConfig,
    prep: &Prepared,
    cells: &[(Cell, Checkpoint)],
    finetune: bool,
) -> Result<Vec<MetricsRow>> {
    let results = par_map(cells, worker_count(cfg), |(cell, ck)| evaluate_cell(cfg, prep, cell, ck, finetune));
    Ok(results.into_iter().collect::<Result<Vec<_>>>()?.into_iter().flatten().collect())
}

fn stage_evaluate(cfg: &ExperimentConfig, prep: &Prepared, finetune: bool) -> Result<EmittedFiles> {
    let out = &cfg.run.output;
    let name = if finetune { "finetune" } else { "probe" };
    let cells = grid(cfg)
        .into_iter()
        .map(|cell| Ok((cell, Checkpoint::load(checkpoint_path(out, &cell))?)))
        .collect::<Result<Vec<_>>>();
    let cells = in_stage(name, cells)?;
    let finetune = finetune || cfg.eval.finetune.enabled;
    let mut rows = in_stage(name, evaluate_all(cfg, prep, &cells, finetune))?;
    let summaries = in_stage("report", report(&mut rows))?;
    in_stage("report", emit_metrics(&rows, &summaries, out, None))
}

fn stage_report(cfg: &ExperimentConfig) -> Result<Vec<TransferSummary>> {
    let out = &cfg.run.output;
    let mut rows = in_stage("report", read_metrics_jsonl(&out.join("metrics.jsonl")))?;
    let summaries = in_stage("report", report(&mut rows))?;
    in_stage("report", metrics::write_report(&summaries, out))?;
    Ok(summaries)
}

/// Full pipeline: data, per-cell init and pretraining, checkpoints, probing
/// (and fine-tuning when enabled) over the S grid, negative-transfer report,
/// metrics files and the run manifest.
pub fn run_pipeline(cfg: &ExperimentConfig) -> Result<RunManifest> {
    let out = cfg.run.output.clone();
    let mut timings = Vec::new();
    let mut clock = Instant::now();
    let mut lap = |name: &str, timings: &mut Vec<(String, f64)>| {
        timings.push((name.to_string(), clock.elapsed().as_secs_f64()));
        clock = Instant::now();
    };
    let prep = stage_ingest(cfg)?;
    if let Some(g) = &prep.generated {
        in_stage("synth", g.write(out.join("data")))?;
    }
    lap("ingest", &mut timings);
    let trained = stage_pretrain(cfg, &prep)?;
    lap("pretrain", &mut timings);
    let (cells, entries): (Vec<(Cell, Checkpoint)>, Vec<CheckpointEntry>) =
        trained.into_iter().map(|(c, ck, e)| ((c, ck), e)).unzip();
    let stage = if cfg.eval.finetune.enabled { "finetune" } else { "probe" };
    let mut rows = in_stage(stage, evaluate_all(cfg, &prep, &cells, cfg.eval.finetune.enabled))?;
    lap("evaluate", &mut timings);
    let summaries = in_stage("report", report(&mut rows))?;
    let manifest_path = out.join("manifest.json");
    let files = in_stage("report", emit_metrics(&rows, &summaries, &out, Some(&manifest_path)))?;
    lap("report", &mut timings);
    let manifest = RunManifest {
        version: VERSION.into(),
        config_hash: cfg.hash(),
        dataset: prep.dataset.clone(),
        output_dir: out.clone(),
        checkpoints: entries,
        metrics_csv: files.metrics_csv,
        metrics_jsonl: files.metrics_jsonl,
        report_json: files.report_json,
        report_csv: files.report_csv,
        logs: out.join("pretrain_log.json"),
        index: files.index,
        timings,
    };
    in_stage("report", write_json(&manifest_path, &manifest))?;
    in_stage("report", write_json(&out.join("config.resolved.json"), cfg))?;
    Ok(manifest)
}
