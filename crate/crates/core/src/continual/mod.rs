//! Task protocol, training engine, baselines and ablations.

mod config;
mod engine;

pub use config::{Ablation, Method, Toggles, TrainConfig};
pub use engine::{run_baseline, run_experiment, sub_seed, ContinualLearner, ExperimentResult, TraceRecord};

#[cfg(test)]
mod tests;
