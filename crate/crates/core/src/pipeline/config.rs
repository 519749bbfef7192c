use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::encoder::{Backbone, EncoderConfig};
use crate::error::{Error, Result};
use crate::eval::{FineTuneConfig, ProbeConfig};
use crate::rdb::SamplingConfig;
use crate::ssl::{ContrastiveMode, NodeNegatives, SslConfig, Strategy};
use crate::synth::TrapSpec;

/// One experiment grid: data source, encoder, pretraining, evaluation and run controls.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    #[serde(default)]
    pub encoder: EncoderConfig,
    #[serde(default)]
    pub sampling: SamplingSection,
    #[serde(default)]
    pub pretrain: PretrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    pub run: RunConfig,
}

/// Subgraph sampling; `depth` defaults to the encoder's layer count.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingSection {
    pub depth: Option<usize>,
    pub fanout_cap: usize,
}

impl Default for SamplingSection {
    fn default() -> Self {
        SamplingSection {
            depth: None,
            fanout_cap: SamplingConfig::default().fanout_cap,
        }
    }
}

/// Either a CSV directory with its schema or a synthetic trap.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub name: Option<String>,
    pub csv_dir: Option<PathBuf>,
    /// Defaults to `schema.toml` inside `csv_dir`.
    pub schema: Option<PathBuf>,
    pub trap: Option<TrapSpec>,
    /// Seeds trap generation, subgraph sampling and the test holdout.
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub mask_rate: f64,
    pub alpha0: f64,
    pub alpha1: f64,
    /// 0 keeps every candidate negative.
    pub negatives_per_positive: usize,
    pub hybrid_contrastive: ContrastiveMode,
    pub node_negatives: NodeNegatives,
    pub reconstruct_all: bool,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        let ssl = SslConfig::default();
        PretrainConfig {
            epochs: 200,
            batch_size: 32,
            learning_rate: 1e-3,
            mask_rate: ssl.mask_rate,
            alpha0: ssl.alpha0,
            alpha1: ssl.alpha1,
            negatives_per_positive: ssl.negatives_per_positive.unwrap_or(0),
            hybrid_contrastive: ssl.hybrid_contrastive,
            node_negatives: ssl.node_negatives,
            reconstruct_all: ssl.reconstruct_all,
        }
    }
}

impl PretrainConfig {
    pub fn ssl(&self) -> SslConfig {
        SslConfig {
            mask_rate: self.mask_rate,
            negatives_per_positive: (self.negatives_per_positive > 0).then_some(self.negatives_per_positive),
            alpha0: self.alpha0,
            alpha1: self.alpha1,
            hybrid_contrastive: self.hybrid_contrastive,
            node_negatives: self.node_negatives,
            reconstruct_all: self.reconstruct_all,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Labeled-fraction grid, in percent of the training pool.
    pub s_percent: Vec<f64>,
    pub test_percent: f64,
    pub probe: ProbeConfig,
    pub finetune: FineTuneConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            s_percent: vec![100.0],
            test_percent: 20.0,
            probe: ProbeConfig::default(),
            finetune: FineTuneConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub strategies: Vec<Strategy>,
    /// Defaults to the single `encoder.backbone`.
    pub backbones: Option<Vec<Backbone>>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    pub output: PathBuf,
    /// Worker threads for the per-cell stages; `RDBSSL_WORKERS` applies when unset.
    pub workers: Option<usize>,
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}

impl ExperimentConfig {
    /// Parses and validates. Relative data paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for p in [&mut cfg.data.csv_dir, &mut cfg.data.schema].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        match (&self.data.csv_dir, &self.data.trap) {
            (Some(_), Some(_)) => return bad("data: give either csv_dir or trap, not both".into()),
            (None, None) => return bad("data: one of csv_dir or trap is required".into()),
            (None, Some(_)) if self.data.schema.is_some() => {
                return bad("data: schema only applies together with csv_dir".into())
            }
            (Some(dir), None) => {
                if !dir.is_dir() {
                    return bad(format!("data.csv_dir {} is not a directory", dir.display()));
                }
                let schema = self.schema_path().expect("csv source");
                if !schema.is_file() {
                    return bad(format!("schema file {} does not exist", schema.display()));
                }
            }
            _ => {}
        }
        self.encoder.validate()?;
        if self.sampling.fanout_cap == 0 {
            return bad("sampling.fanout_cap must be at least 1".into());
        }
        if self.run.strategies.is_empty() {
            return bad("run.strategies must not be empty".into());
        }
        if has_duplicates(&self.run.strategies) {
            return bad("run.strategies lists a strategy twice".into());
        }
        let backbones = self.backbones();
        if backbones.is_empty() || has_duplicates(&backbones) {
            return bad("run.backbones must be non-empty without repeats".into());
        }
        if self.run.seeds.is_empty() || has_duplicates(&self.run.seeds) {
            return bad("run.seeds must be non-empty without repeats".into());
        }
        if self.run.workers == Some(0) {
            return bad("run.workers must be at least 1".into());
        }
        let p = &self.pretrain;
        if p.batch_size == 0 {
            return bad("pretrain.batch_size must be at least 1".into());
        }
        if !(p.learning_rate > 0.0 && p.learning_rate.is_finite()) {
            return bad(format!("pretrain.learning_rate must be positive, got {}", p.learning_rate));
        }
        if !(0.0..=1.0).contains(&p.mask_rate) {
            return bad(format!("pretrain.mask_rate must lie in [0, 1], got {}", p.mask_rate));
        }
        if self.run.strategies.contains(&Strategy::Hybrid) {
            crate::ssl::check_alphas(p.alpha0, p.alpha1)?;
        }
        let e = &self.eval;
        if e.s_percent.is_empty() || e.s_percent.iter().any(|&s| !(s > 0.0 && s <= 100.0)) {
            return bad("eval.s_percent needs values in (0, 100]".into());
        }
        if !(e.test_percent > 0.0 && e.test_percent < 100.0) {
            return bad(format!("eval.test_percent must lie in (0, 100), got {}", e.test_percent));
        }
        if e.probe.epochs == 0 || !(e.probe.learning_rate > 0.0) {
            return bad("eval.probe needs positive epochs and learning_rate".into());
        }
        if e.finetune.enabled && (e.finetune.batch_size == 0 || !(e.finetune.learning_rate > 0.0)) {
            return bad("eval.finetune needs a positive batch_size and learning_rate".into());
        }
        Ok(())
    }

    pub fn sampling(&self) -> SamplingConfig {
        SamplingConfig {
            depth: self.sampling.depth.unwrap_or(self.encoder.layers),
            fanout_cap: self.sampling.fanout_cap,
        }
    }

    pub fn schema_path(&self) -> Option<PathBuf> {
        let dir = self.data.csv_dir.as_ref()?;
        Some(self.data.schema.clone().unwrap_or_else(|| dir.join("schema.toml")))
    }

    pub fn backbones(&self) -> Vec<Backbone> {
        self.run.backbones.clone().unwrap_or_else(|| vec![self.encoder.backbone])
    }

    pub fn dataset_name(&self) -> String {
        if let Some(name) = &self.data.name {
            return name.clone();
        }
        if let Some(trap) = &self.data.trap {
            return trap.name().to_string();
        }
        self.data
            .csv_dir
            .as_ref()
            .and_then(|d| d.file_name())
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".into())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

fn has_duplicates<T: PartialEq>(xs: &[T]) -> bool {
    xs.iter().enumerate().any(|(i, x)| xs[..i].contains(x))
}
