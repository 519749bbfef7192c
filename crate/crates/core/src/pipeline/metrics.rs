use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::eval::{MetricsRow, TransferSummary};

/// Column order of `metrics.csv`.
pub const METRICS_COLUMNS: [&str; 8] =
    ["dataset", "backbone", "strategy", "S", "seed", "probe_auc", "finetune_auc", "delta_vs_untrained"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmittedFiles {
    pub metrics_csv: PathBuf,
    pub metrics_jsonl: PathBuf,
    pub report_json: PathBuf,
    pub report_csv: PathBuf,
    pub index: PathBuf,
}

fn csv_bytes<T: Serialize>(rows: &[T], header: Option<&[&str]>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    if rows.is_empty() {
        if let Some(h) = header {
            w.write_record(h)?;
        }
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| Error::Data(e.to_string()))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// `report.json` and `report.csv` with one negative-transfer summary per cell.
pub fn write_report(summaries: &[TransferSummary], out: &Path) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let json_path = out.join("report.json");
    write_file(&json_path, (serde_json::to_string_pretty(summaries)? + "\n").as_bytes())?;
    let csv_path = out.join("report.csv");
    let header = [
        "dataset",
        "backbone",
        "strategy",
        "S",
        "seeds",
        "mean_auc",
        "std_auc",
        "untrained_mean_auc",
        "delta",
        "negative_transfer",
    ];
    write_file(&csv_path, &csv_bytes(summaries, Some(&header))?)?;
    Ok((json_path, csv_path))
}

/// Appends one JSON line to `index.jsonl` under `out`.
pub fn append_index(out: &Path, entry: &serde_json::Value) -> Result<PathBuf> {
    let path = out.join("index.jsonl");
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|e| Error::io(&path, e))?;
    writeln!(f, "{}", serde_json::to_string(entry)?).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Writes `metrics.csv`, `metrics.jsonl` and the report, then appends an
/// entry pointing at `manifest` to the cumulative index.
pub fn emit_metrics(
    rows: &[MetricsRow],
    summaries: &[TransferSummary],
    out: &Path,
    manifest: Option<&Path>,
) -> Result<EmittedFiles> {
    if rows.is_empty() {
        return Err(Error::InvalidInput("no metrics rows to emit".into()));
    }
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let csv = csv_bytes(rows, None)?;
    let metrics_csv = out.join("metrics.csv");
    write_file(&metrics_csv, &csv)?;
    let mut jsonl = String::new();
    for r in rows {
        jsonl += &serde_json::to_string(r)?;
        jsonl.push('\n');
    }
    let metrics_jsonl = out.join("metrics.jsonl");
    write_file(&metrics_jsonl, jsonl.as_bytes())?;
    let (report_json, report_csv) = write_report(summaries, out)?;
    let entry = serde_json::json!({
        "manifest": manifest,
        "metrics_csv": metrics_csv,
        "metrics_sha256": hex::encode(Sha256::digest(&csv)),
        "rows": rows.len(),
        "negative_transfer_flags": summaries.iter().filter(|s| s.negative_transfer).count(),
    });
    let index = append_index(out, &entry)?;
    Ok(EmittedFiles {
        metrics_csv,
        metrics_jsonl,
        report_json,
        report_csv,
        index,
    })
}

pub fn read_metrics_jsonl(path: &Path) -> Result<Vec<MetricsRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let rows = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect::<std::result::Result<Vec<MetricsRow>, _>>()?;
    if rows.is_empty() {
        return Err(Error::Data(format!("{} holds no metrics rows", path.display())));
    }
    Ok(rows)
}
