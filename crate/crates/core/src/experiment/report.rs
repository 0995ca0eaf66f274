use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::run::RunReport;
use super::{ExperimentError, Result, Stage};
use crate::federation::StrategyKind;
use crate::heterogeneity::Family;

pub const REPORT_JSON: &str = "report.json";

/// Which report files to write. Training logs and the config echo are
/// written either way.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Formats {
    pub json: bool,
    pub csv: bool,
}

impl Formats {
    pub const JSON: Self = Self { json: true, csv: false };
    pub const CSV: Self = Self { json: false, csv: true };
    pub const BOTH: Self = Self { json: true, csv: true };
}

impl FromStr for Formats {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(Self::JSON),
            "csv" => Ok(Self::CSV),
            "both" => Ok(Self::BOTH),
            other => Err(format!("unknown format {other:?} (json, csv or both)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetailRow {
    pub run_id: String,
    pub family: Family,
    pub dataset: String,
    #[serde(rename = "K")]
    pub k: usize,
    pub sparsity: String,
    pub strategy: StrategyKind,
    pub client_id: usize,
    pub cluster_id: usize,
    pub test_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub strategy: StrategyKind,
    pub mean_accuracy: f64,
    pub ari: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub run_id: String,
    pub family: Family,
    pub dataset: String,
    #[serde(rename = "K")]
    pub k: usize,
    pub sparsity: String,
    pub strategy: StrategyKind,
    pub mean_accuracy: f64,
    pub ari: Option<f64>,
}

impl RunReport {
    pub fn detail_rows(&self) -> Vec<DetailRow> {
        let mut rows = Vec::new();
        for s in &self.strategies {
            for (client, acc) in self.clients.iter().zip(&s.per_client_accuracy) {
                rows.push(DetailRow {
                    run_id: self.run_id.clone(),
                    family: self.family,
                    dataset: self.dataset.clone(),
                    k: self.k,
                    sparsity: self.sparsity.clone(),
                    strategy: s.strategy,
                    client_id: client.client_id,
                    cluster_id: client.cluster_id,
                    test_accuracy: *acc,
                });
            }
        }
        rows
    }

    pub fn summary_rows(&self) -> Vec<SummaryRow> {
        self.strategies
            .iter()
            .map(|s| SummaryRow {
                strategy: s.strategy,
                mean_accuracy: s.mean_accuracy,
                ari: s.ari,
            })
            .collect()
    }
}

fn emit_err(path: &Path, e: impl std::fmt::Display) -> ExperimentError {
    ExperimentError::msg(Stage::Emit, format!("{}: {e}", path.display()))
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| emit_err(path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| emit_err(path, e))?;
    }
    w.flush().map_err(|e| emit_err(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| emit_err(path, e))
}

fn write_files(report: &RunReport, dir: &Path, formats: Formats, written: &mut Vec<PathBuf>) -> Result<()> {
    let mut next = |name: &str| {
        let p = dir.join(name);
        written.push(p.clone());
        p
    };
    let cfg = next("config.toml");
    write_text(&cfg, &report.config.to_toml()?)?;

    let log = next("train_log.jsonl");
    let file = fs::File::create(&log).map_err(|e| emit_err(&log, e))?;
    let mut w = BufWriter::new(file);
    for s in &report.strategies {
        for rec in &s.train_log {
            serde_json::to_writer(&mut w, rec).map_err(|e| emit_err(&log, e))?;
            w.write_all(b"\n").map_err(|e| emit_err(&log, e))?;
        }
    }
    w.flush().map_err(|e| emit_err(&log, e))?;

    if formats.json {
        let p = next(REPORT_JSON);
        let text = serde_json::to_string_pretty(report).map_err(|e| emit_err(&p, e))?;
        write_text(&p, &text)?;
    }
    if formats.csv {
        let p = next("detail.csv");
        write_csv(&p, &report.detail_rows())?;
        let p = next("summary.csv");
        write_csv(&p, &report.summary_rows())?;
    }
    Ok(())
}

/// Writes the report into `dir`. On failure every file this call created is
/// removed again.
pub fn emit_report(report: &RunReport, dir: &Path, formats: Formats) -> Result<Vec<PathBuf>> {
    let existed = dir.exists();
    fs::create_dir_all(dir).map_err(|e| emit_err(dir, e))?;
    let mut written = Vec::new();
    match write_files(report, dir, formats, &mut written) {
        Ok(()) => Ok(written),
        Err(e) => {
            for p in &written {
                let _ = fs::remove_file(p);
            }
            if !existed {
                let _ = fs::remove_dir(dir);
            }
            Err(e)
        }
    }
}

/// Reads `report.json`, either given directly or inside a run directory.
pub fn read_report(path: &Path) -> Result<RunReport> {
    let file = if path.is_dir() { path.join(REPORT_JSON) } else { path.to_path_buf() };
    let text = fs::read_to_string(&file).map_err(|e| emit_err(&file, e))?;
    serde_json::from_str(&text).map_err(|e| emit_err(&file, e))
}

fn collect(dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)?.map(|e| e.map(|e| e.path())).collect::<std::io::Result<_>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            collect(&p, out)?;
        } else if p.file_name().is_some_and(|n| n == REPORT_JSON) {
            out.push(p);
        }
    }
    Ok(())
}

/// Every `report.json` under `dir`, in path order.
pub fn read_reports(dir: &Path) -> Result<Vec<RunReport>> {
    let mut paths = Vec::new();
    collect(dir, &mut paths).map_err(|e| emit_err(dir, e))?;
    paths.iter().map(|p| read_report(p)).collect()
}

pub fn aggregate_reports(reports: &[RunReport]) -> Vec<AggregateRow> {
    reports
        .iter()
        .flat_map(|r| {
            r.strategies.iter().map(move |s| AggregateRow {
                run_id: r.run_id.clone(),
                family: r.family,
                dataset: r.dataset.clone(),
                k: r.k,
                sparsity: r.sparsity.clone(),
                strategy: s.strategy,
                mean_accuracy: s.mean_accuracy,
                ari: s.ari,
            })
        })
        .collect()
}

/// Strategies as rows, runs as columns, mean accuracy in the cells.
pub fn format_table(reports: &[RunReport]) -> String {
    let mut kinds: Vec<StrategyKind> = reports.iter().flat_map(|r| r.strategies.iter().map(|s| s.strategy)).collect();
    kinds.sort();
    kinds.dedup();
    let mut out = String::new();
    let _ = write!(out, "{:<12}", "strategy");
    for r in reports {
        let _ = write!(out, " {:>24}", format!("{}/{}/K{}/{}", r.dataset, r.family, r.k, r.sparsity));
    }
    out.push('\n');
    for kind in kinds {
        let _ = write!(out, "{:<12}", kind.as_str());
        for r in reports {
            match r.mean_accuracy(kind) {
                Some(a) => {
                    let _ = write!(out, " {a:>24.4}");
                }
                None => {
                    let _ = write!(out, " {:>24}", "-");
                }
            }
        }
        out.push('\n');
    }
    out
}

/// Writes `aggregate.csv` (one row per run and strategy) and
/// `aggregate_table.txt`.
pub fn write_aggregate(dir: &Path, reports: &[RunReport]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| emit_err(dir, e))?;
    let long = dir.join("aggregate.csv");
    write_csv(&long, &aggregate_reports(reports))?;
    let table = dir.join("aggregate_table.txt");
    write_text(&table, &format_table(reports))?;
    Ok(vec![long, table])
}
