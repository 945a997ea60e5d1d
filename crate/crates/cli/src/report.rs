//! Aggregates `metrics.csv` files found under one or more directories.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use walkdir::WalkDir;

use crate::error::CliError;
use crate::output::{CONFIG, METRICS};

#[derive(Debug, Deserialize)]
struct MetricsRow {
    method: String,
    mode: String,
    avg_accuracy: f64,
    avg_forgetting: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub label: String,
    pub method: String,
    pub mode: String,
    pub runs: usize,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub mean_forgetting: f64,
    pub std_forgetting: f64,
}

/// Table order: ablation labels A..F then AGLA, then everything else by name.
fn order(label: &str) -> (usize, String) {
    const ABLATION: [&str; 7] = ["A", "B", "C", "D", "E", "F", "AGLA"];
    let rank = ABLATION.iter().position(|&l| l == label).unwrap_or(ABLATION.len());
    (rank, label.to_string())
}

fn label_of(metrics: &Path, row: &MetricsRow) -> String {
    let from_config = metrics
        .parent()
        .map(|d| d.join(CONFIG))
        .and_then(|p| std::fs::read_to_string(p).ok())
        .and_then(|t| serde_json::from_str::<serde_json::Value>(&t).ok())
        .and_then(|v| v.get("label").and_then(|l| l.as_str()).map(String::from));
    from_config.unwrap_or_else(|| format!("{}/{}", row.method, row.mode))
}

/// Population mean and standard deviation.
fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn summarize(roots: &[PathBuf]) -> Result<Vec<SummaryRow>, CliError> {
    let mut groups: BTreeMap<(usize, String), (String, String, Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for root in roots {
        if !root.is_dir() {
            return Err(CliError::Data(format!("{} is not a directory", root.display())));
        }
        for entry in WalkDir::new(root).sort_by_file_name() {
            let entry = entry.map_err(|e| CliError::Data(e.to_string()))?;
            if entry.file_name() != METRICS {
                continue;
            }
            let mut reader = csv::Reader::from_path(entry.path()).map_err(|e| CliError::Data(e.to_string()))?;
            for row in reader.deserialize::<MetricsRow>() {
                let row = row.map_err(|e| CliError::Data(format!("{}: {e}", entry.path().display())))?;
                let label = label_of(entry.path(), &row);
                let g = groups
                    .entry(order(&label))
                    .or_insert_with(|| (row.method.clone(), row.mode.clone(), Vec::new(), Vec::new()));
                g.2.push(row.avg_accuracy);
                g.3.push(row.avg_forgetting);
            }
        }
    }
    if groups.is_empty() {
        return Err(CliError::Data(format!("no {METRICS} found")));
    }
    Ok(groups
        .into_iter()
        .map(|((_, label), (method, mode, acc, fgt))| {
            let (mean_accuracy, std_accuracy) = mean_std(&acc);
            let (mean_forgetting, std_forgetting) = mean_std(&fgt);
            SummaryRow { label, method, mode, runs: acc.len(), mean_accuracy, std_accuracy, mean_forgetting, std_forgetting }
        })
        .collect())
}

pub fn render_table(rows: &[SummaryRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<24} {:<10} {:<9} {:>4} {:>16} {:>16}", "config", "method", "mode", "runs", "accuracy", "forgetting");
    for r in rows {
        let _ = writeln!(
            s,
            "{:<24} {:<10} {:<9} {:>4} {:>8.4} ± {:<5.3} {:>8.4} ± {:<5.3}",
            r.label, r.method, r.mode, r.runs, r.mean_accuracy, r.std_accuracy, r.mean_forgetting, r.std_forgetting
        );
    }
    s
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["config", "method", "mode", "runs", "mean_accuracy", "std_accuracy", "mean_forgetting", "std_forgetting"])?;
    for r in rows {
        w.write_record([
            r.label.clone(),
            r.method.clone(),
            r.mode.clone(),
            r.runs.to_string(),
            r.mean_accuracy.to_string(),
            r.std_accuracy.to_string(),
            r.mean_forgetting.to_string(),
            r.std_forgetting.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
