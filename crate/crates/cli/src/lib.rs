//! Command-line experiment runner. [`run_cli`] is the whole program; the
//! binary only forwards its exit code.

pub mod config;
pub mod error;
pub mod output;
pub mod report;

use std::ffi::OsString;
use std::path::PathBuf;

use agla::continual::{run_experiment, Ablation, Method};
use agla::cos::{mse_reduction_experiment, MseExperimentConfig};
use agla::nets::HeadMode;
use clap::{Args, Parser, Subcommand, ValueEnum};

pub use config::{DatasetSpec, ExperimentConfig};
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "agla", version, about = "Assessor-guided continual learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train one method over the task stream and write its results.
    Run(RunArgs),
    /// Run the six single-component ablations and full AGLA.
    Ablate(RunArgs),
    /// Monte-Carlo check that likelihood-ratio weights reduce regression error.
    CosExperiment(CosArgs),
    /// Aggregate metrics.csv files under the given directories.
    Report(ReportArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    #[value(name = "task-il")]
    TaskIl,
    #[value(name = "class-il")]
    ClassIl,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// JSON file with flat TrainConfig keys plus dataset, out and label.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// agla, finetune, joint or replay_der.
    #[arg(long)]
    method: Option<String>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    label: Option<String>,
    #[arg(long)]
    no_assessor: bool,
    #[arg(long)]
    no_augment: bool,
    #[arg(long)]
    no_random_transform: bool,
    #[arg(long)]
    no_cos_weights: bool,
    #[arg(long)]
    no_der_loss: bool,
    #[arg(long)]
    no_distill_loss: bool,
}

#[derive(Debug, Args)]
struct CosArgs {
    /// JSON file with experiment keys (theta, clean, copies, augmentation, ...).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of Monte-Carlo repetitions.
    #[arg(long)]
    seeds: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Directories searched recursively for metrics.csv.
    #[arg(required = true)]
    dirs: Vec<PathBuf>,
    /// Also write the summary table as CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn resolve(&self) -> Result<ExperimentConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::from_file(p)?,
            None => ExperimentConfig::default(),
        };
        let t = &mut cfg.train;
        if let Some(s) = self.seed {
            t.seed = s;
        }
        if let Some(m) = &self.method {
            t.method = m.parse::<Method>().map_err(|e| CliError::Config(e.to_string()))?;
        }
        if let Some(m) = self.mode {
            t.mode = match m {
                ModeArg::TaskIl => HeadMode::TaskIncremental,
                ModeArg::ClassIl => HeadMode::ClassIncremental,
            };
        }
        if let Some(e) = self.epochs {
            t.epochs = e;
        }
        for (off, flag) in [
            (self.no_assessor, &mut t.assessor),
            (self.no_augment, &mut t.augment),
            (self.no_random_transform, &mut t.random_transform),
            (self.no_cos_weights, &mut t.cos_weights),
            (self.no_der_loss, &mut t.der_loss),
            (self.no_distill_loss, &mut t.distill_loss),
        ] {
            if off {
                *flag = false;
            }
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        if let Some(l) = &self.label {
            cfg.label = Some(l.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(args: &RunArgs) -> Result<(), CliError> {
    let cfg = args.resolve()?;
    let stream = cfg.dataset.load()?;
    output::ensure_dir(&cfg.out)?;
    let result = run_experiment(&stream, &cfg.train)?;
    output::write_run(&cfg.out, &cfg, &result)?;
    println!(
        "{} {} seed {}: accuracy {:.4}, forgetting {:.4}",
        result.method.name(),
        output::mode_name(result.mode),
        result.seed,
        result.average_accuracy,
        result.forgetting.value
    );
    Ok(())
}

/// Ablation rows in table order; `None` is full AGLA.
fn ablation_grid() -> Vec<(String, Option<Ablation>)> {
    Ablation::ALL
        .iter()
        .map(|a| (a.label().to_string(), Some(*a)))
        .chain(std::iter::once(("AGLA".to_string(), None)))
        .collect()
}

fn ablate(args: &RunArgs) -> Result<(), CliError> {
    let base = args.resolve()?;
    let stream = base.dataset.load()?;
    output::ensure_dir(&base.out)?;
    let mut rows = Vec::new();
    for (label, ablation) in ablation_grid() {
        let mut cfg = base.clone();
        cfg.train = match ablation {
            Some(a) => a.apply(&base.train),
            None => agla::continual::TrainConfig { method: Method::Agla, ..base.train.clone() },
        };
        cfg.out = base.out.join(&label);
        cfg.label = Some(label.clone());
        log::info!("ablation {label}");
        let result = run_experiment(&stream, &cfg.train)?;
        output::write_run(&cfg.out, &cfg, &result)?;
        println!("{label:<5} accuracy {:.4}, forgetting {:.4}", result.average_accuracy, result.forgetting.value);
        rows.push((label, output::metrics_row(&result)));
    }
    let mut w = csv::Writer::from_path(base.out.join("ablation.csv"))?;
    let mut header = vec!["config"];
    header.extend(output::METRICS_HEADER);
    w.write_record(&header)?;
    for (label, row) in rows {
        w.write_record(std::iter::once(label).chain(row))?;
    }
    w.flush()?;
    Ok(())
}

fn cos_experiment(args: &CosArgs) -> Result<(), CliError> {
    let mut cfg = match &args.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("cannot read config {}: {e}", p.display())))?;
            serde_json::from_str::<MseExperimentConfig>(&text).map_err(|e| CliError::Config(e.to_string()))?
        }
        None => MseExperimentConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(r) = args.seeds {
        cfg.seeds = r;
    }
    cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let out = args.out.clone().unwrap_or_else(|| PathBuf::from("results"));
    output::ensure_dir(&out)?;
    let report = mse_reduction_experiment::<f64>(&cfg)?;
    report.save_csv(&out.join("cos_experiment.csv"))?;
    let summary = serde_json::json!({
        "config": cfg,
        "mse_clean": report.mse_clean,
        "mean_unweighted": report.mean_unweighted,
        "mean_weighted": report.mean_weighted,
        "t_statistic": report.t_statistic,
        "p_value": report.p_value,
    });
    std::fs::write(out.join("cos_summary.json"), serde_json::to_string_pretty(&summary).expect("json") + "\n")?;
    println!(
        "{} seeds: unweighted MSE {:.6}, weighted MSE {:.6}, one-sided p = {:.3e}",
        cfg.seeds, report.mean_unweighted, report.mean_weighted, report.p_value
    );
    Ok(())
}

fn report(args: &ReportArgs) -> Result<(), CliError> {
    let rows = report::summarize(&args.dirs)?;
    print!("{}", report::render_table(&rows));
    if let Some(p) = &args.out {
        if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            output::ensure_dir(dir)?;
        }
        report::write_summary(p, &rows)?;
    }
    Ok(())
}

/// Parses `args` (program name first) and runs the command.
/// Returns 0 on success, 2 for usage or config errors, 3 for data errors,
/// and 1 when training or writing results fails.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let outcome = match &cli.command {
        Command::Run(a) => run(a),
        Command::Ablate(a) => ablate(a),
        Command::CosExperiment(a) => cos_experiment(a),
        Command::Report(a) => report(a),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}
