//! Runs every method on the synthetic reference stream and prints the
//! final average accuracy and forgetting.
//!
//! `cargo run --release -p agla-core --example reference_stream -- [seeds]`

use std::time::Instant;

use agla::continual::{run_experiment, Ablation, Method, TrainConfig};
use agla::data::{generate_synthetic_stream, SyntheticSpec};

fn main() -> agla::Result<()> {
    let seeds: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let mut runs: Vec<(String, TrainConfig)> = Method::ALL
        .iter()
        .map(|&m| (m.name().to_string(), TrainConfig::reference(m)))
        .collect();
    for a in Ablation::ALL {
        runs.push((a.label().to_string(), a.apply(&TrainConfig::reference(Method::Agla))));
    }
    for (name, cfg) in runs {
        let (mut acc, mut fgt) = (0.0, 0.0);
        let mut last_val = [0.0; 5];
        let t = Instant::now();
        for seed in 0..seeds {
            let stream = generate_synthetic_stream::<f64>(&SyntheticSpec { seed, ..Default::default() })?;
            let r = run_experiment(&stream, &TrainConfig { seed, ..cfg.clone() })?;
            acc += r.average_accuracy;
            fgt += r.forgetting.value;
            for tr in r.traces.iter().filter(|t| t.epoch == cfg.epochs) {
                if tr.task <= 5 {
                    last_val[tr.task - 1] += tr.val_loss / seeds as f64;
                }
            }
        }
        let n = seeds as f64;
        println!(
            "{name:>10}  acc {:.4}  forgetting {:.4}  val {:?}  {:.1}s",
            acc / n,
            fgt / n,
            last_val.iter().map(|v| (v * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
            t.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
