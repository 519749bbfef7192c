use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{error, info};

use rdbssl::pipeline::{execute, selftest, ExperimentConfig, Stage};
use rdbssl::{Error, Result};

#[derive(Parser)]
#[command(name = "rdbssl", version, about = "Self-supervised pretraining and probing of relational-database graph encoders")]
struct Cli {
    #[arg(long, value_enum, default_value = "info", global = true)]
    log_level: LogLevel,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum LogLevel {
    Error,
    Warn,
    Info,
    Debug,
}

#[derive(Subcommand)]
enum Command {
    /// Load or generate the data, sample subgraphs and fix the evaluation split.
    Ingest(Common),
    /// Write the configured synthetic trap as CSV files plus metadata.
    Synth(Common),
    /// Initialize and pretrain one checkpoint per (backbone, strategy, seed).
    Pretrain(Common),
    /// Linear-probe saved checkpoints and write metrics.
    Probe(Common),
    /// Fine-tune saved checkpoints and write metrics.
    Finetune(Common),
    /// Rebuild the negative-transfer report from saved metrics.
    Report(Common),
    /// The full pipeline, or a single stage with --stage.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        stage: Option<StageArg>,
    },
    /// Fast built-in correctness checks; exits with 4 on failure.
    Selftest,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Overrides run.output.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Replaces run.seeds with this single seed.
    #[arg(long)]
    seed_override: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum StageArg {
    Ingest,
    Synth,
    Pretrain,
    Probe,
    Finetune,
    Report,
    Run,
}

impl From<StageArg> for Stage {
    fn from(s: StageArg) -> Stage {
        match s {
            StageArg::Ingest => Stage::Ingest,
            StageArg::Synth => Stage::Synth,
            StageArg::Pretrain => Stage::Pretrain,
            StageArg::Probe => Stage::Probe,
            StageArg::Finetune => Stage::Finetune,
            StageArg::Report => Stage::Report,
            StageArg::Run => Stage::Run,
        }
    }
}

fn load(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(out) = &common.output {
        cfg.run.output = out.clone();
    }
    if let Some(seed) = common.seed_override {
        cfg.run.seeds = vec![seed];
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run_stage(common: &Common, stage: Stage) -> Result<()> {
    let cfg = load(common)?;
    info!("config {} -> {}", cfg.hash(), cfg.run.output.display());
    if let Some(manifest) = execute(&cfg, stage)? {
        let report: Vec<rdbssl::eval::TransferSummary> =
            serde_json::from_str(&std::fs::read_to_string(&manifest.report_json).map_err(|e| Error::Data(e.to_string()))?)?;
        for s in &report {
            println!(
                "{} {} {:<10} S={:<5} auc {:.4} ± {:.4}  untrained {:.4}  delta {:+.4}{}",
                s.dataset,
                s.backbone,
                s.strategy,
                s.s,
                s.mean_auc,
                s.std_auc,
                s.untrained_mean_auc,
                s.delta,
                if s.negative_transfer { "  NEGATIVE TRANSFER" } else { "" }
            );
        }
        println!("manifest: {}", cfg.run.output.join("manifest.json").display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.log_level {
        LogLevel::Error => log::LevelFilter::Error,
        LogLevel::Warn => log::LevelFilter::Warn,
        LogLevel::Info => log::LevelFilter::Info,
        LogLevel::Debug => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();

    let result = match &cli.command {
        Command::Selftest => {
            let checks = selftest();
            for c in &checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            return if checks.iter().all(|c| c.passed) { ExitCode::SUCCESS } else { ExitCode::from(4) };
        }
        Command::Ingest(c) => run_stage(c, Stage::Ingest),
        Command::Synth(c) => run_stage(c, Stage::Synth),
        Command::Pretrain(c) => run_stage(c, Stage::Pretrain),
        Command::Probe(c) => run_stage(c, Stage::Probe),
        Command::Finetune(c) => run_stage(c, Stage::Finetune),
        Command::Report(c) => run_stage(c, Stage::Report),
        Command::Run { common, stage } => run_stage(common, stage.map_or(Stage::Run, Stage::from)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
