//! Result files. Floats are written with Rust's `Display`, which is the
//! shortest decimal that parses back to the same `f64`.

use std::fs;
use std::path::Path;

use agla::continual::ExperimentResult;
use agla::nets::HeadMode;

use crate::config::ExperimentConfig;
use crate::error::CliError;

pub const METRICS: &str = "metrics.csv";
pub const ACC_MATRIX: &str = "acc_matrix.csv";
pub const TRACES: &str = "traces.csv";
pub const CONFIG: &str = "config.json";

pub fn mode_name(mode: HeadMode) -> &'static str {
    match mode {
        HeadMode::ClassIncremental => "class-il",
        HeadMode::TaskIncremental => "task-il",
    }
}

fn f(v: f64) -> String {
    v.to_string()
}

pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Config(format!("cannot create output directory {}: {e}", dir.display())))
}

pub fn metrics_row(r: &ExperimentResult) -> [String; 5] {
    [
        r.method.name().to_string(),
        mode_name(r.mode).to_string(),
        r.seed.to_string(),
        f(r.average_accuracy),
        f(r.forgetting.value),
    ]
}

pub const METRICS_HEADER: [&str; 5] = ["method", "mode", "seed", "avg_accuracy", "avg_forgetting"];

/// Writes the four per-run files into `dir`.
pub fn write_run(dir: &Path, config: &ExperimentConfig, r: &ExperimentResult) -> Result<(), CliError> {
    ensure_dir(dir)?;
    let mut w = csv::Writer::from_path(dir.join(METRICS))?;
    w.write_record(METRICS_HEADER)?;
    w.write_record(metrics_row(r))?;
    w.flush()?;

    // tasks are numbered from 1 in every file
    let mut w = csv::Writer::from_path(dir.join(ACC_MATRIX))?;
    w.write_record(["k", "j", "accuracy"])?;
    for (k, j, a) in r.matrix.cells() {
        w.write_record([(k + 1).to_string(), (j + 1).to_string(), f(a)])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join(TRACES))?;
    w.write_record(["task", "epoch", "train_loss", "val_loss", "mean_alpha", "mean_beta", "mean_gamma"])?;
    for t in &r.traces {
        w.write_record([
            t.task.to_string(),
            t.epoch.to_string(),
            f(t.train_loss),
            f(t.val_loss),
            f(t.mean_alpha),
            f(t.mean_beta),
            f(t.mean_gamma),
        ])?;
    }
    w.flush()?;

    let json = serde_json::to_string_pretty(&config.to_json()).map_err(|e| CliError::Run(e.to_string()))?;
    fs::write(dir.join(CONFIG), json + "\n")?;
    Ok(())
}
