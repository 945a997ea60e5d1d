//! Experiment configuration: a flat JSON object whose keys are
//! `TrainConfig` fields plus `dataset`, `out` and `label`.

use std::path::{Path, PathBuf};

use agla::continual::TrainConfig;
use agla::data::{generate_synthetic_stream, load_csv_dataset, load_idx_dataset, IdxSplit, SyntheticSpec, TaskStream};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    Synthetic(SyntheticSpec),
    /// IDX image/label files; test files are optional.
    Idx {
        images: PathBuf,
        labels: PathBuf,
        test_images: Option<PathBuf>,
        test_labels: Option<PathBuf>,
        #[serde(default = "two")]
        classes_per_task: usize,
        #[serde(default = "fifth")]
        test_fraction: f64,
        max_train_per_class: Option<usize>,
    },
    /// Headerless CSV, integer label in the first column.
    Csv {
        path: PathBuf,
        #[serde(default = "two")]
        classes_per_task: usize,
        #[serde(default = "fifth")]
        test_fraction: f64,
    },
}

fn two() -> usize {
    2
}

fn fifth() -> f64 {
    0.2
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::Synthetic(SyntheticSpec::default())
    }
}

impl DatasetSpec {
    fn paths(&self) -> Vec<&Path> {
        match self {
            DatasetSpec::Synthetic(_) => vec![],
            DatasetSpec::Idx { images, labels, test_images, test_labels, .. } => {
                let mut p = vec![images.as_path(), labels.as_path()];
                p.extend(test_images.iter().chain(test_labels).map(PathBuf::as_path));
                p
            }
            DatasetSpec::Csv { path, .. } => vec![path.as_path()],
        }
    }

    /// Builds the task stream. Invalid synthetic parameters are config
    /// errors; anything that goes wrong reading files is a data error.
    pub fn load(&self) -> Result<TaskStream<f64>, CliError> {
        if let Some(missing) = self.paths().into_iter().find(|p| !p.exists()) {
            return Err(CliError::Data(format!("{} does not exist", missing.display())));
        }
        match self {
            DatasetSpec::Synthetic(spec) => {
                spec.validate().map_err(|e| CliError::Config(e.to_string()))?;
                generate_synthetic_stream(spec).map_err(|e| CliError::Data(e.to_string()))
            }
            DatasetSpec::Idx { images, labels, test_images, test_labels, classes_per_task, test_fraction, max_train_per_class } => {
                let test = match (test_images, test_labels) {
                    (Some(i), Some(l)) => Some((i.as_path(), l.as_path())),
                    (None, None) => None,
                    _ => return Err(CliError::Config("test_images and test_labels go together".into())),
                };
                let split = IdxSplit {
                    classes_per_task: *classes_per_task,
                    test_fraction: *test_fraction,
                    max_train_per_class: *max_train_per_class,
                };
                load_idx_dataset(images, labels, test, &split).map_err(|e| CliError::Data(e.to_string()))
            }
            DatasetSpec::Csv { path, classes_per_task, test_fraction } => {
                load_csv_dataset(path, *classes_per_task, *test_fraction).map_err(|e| CliError::Data(e.to_string()))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub train: TrainConfig,
    pub dataset: DatasetSpec,
    pub out: PathBuf,
    pub label: Option<String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            train: TrainConfig::default(),
            dataset: DatasetSpec::default(),
            out: PathBuf::from("results"),
            label: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let value: Value = serde_json::from_str(text).map_err(|e| CliError::Config(format!("config is not valid JSON: {e}")))?;
        let Value::Object(mut map) = value else {
            return Err(CliError::Config("config must be a JSON object".into()));
        };
        let mut cfg = ExperimentConfig::default();
        if let Some(d) = map.remove("dataset") {
            cfg.dataset = serde_json::from_value(d).map_err(|e| CliError::Config(format!("dataset: {e}")))?;
        }
        if let Some(o) = map.remove("out") {
            cfg.out = serde_json::from_value(o).map_err(|e| CliError::Config(format!("out: {e}")))?;
        }
        if let Some(l) = map.remove("label") {
            cfg.label = serde_json::from_value(l).map_err(|e| CliError::Config(format!("label: {e}")))?;
        }
        cfg.train = serde_json::from_value(Value::Object(map)).map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// The resolved configuration as one flat JSON object, readable by
    /// [`from_json`](Self::from_json).
    pub fn to_json(&self) -> Value {
        let mut map = match serde_json::to_value(&self.train).expect("config serialises") {
            Value::Object(m) => m,
            _ => Map::new(),
        };
        map.insert("dataset".into(), serde_json::to_value(&self.dataset).expect("dataset serialises"));
        map.insert("out".into(), Value::String(self.out.display().to_string()));
        if let Some(l) = &self.label {
            map.insert("label".into(), Value::String(l.clone()));
        }
        Value::Object(map)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.train.validate().map_err(|e| CliError::Config(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use agla::continual::Method;
    use agla::nets::HeadMode;

    use super::*;

    #[test]
    fn flat_keys_override_defaults() {
        let c = ExperimentConfig::from_json(r#"{"epochs": 3, "method": "replay_der", "mode": "task-il", "label": "x"}"#).unwrap();
        assert_eq!(c.train.epochs, 3);
        assert_eq!(c.train.method, Method::ReplayDer);
        assert_eq!(c.train.mode, HeadMode::TaskIncremental);
        assert_eq!(c.label.as_deref(), Some("x"));
        assert_eq!(c.train.lr, TrainConfig::default().lr);
    }

    #[test]
    fn unknown_keys_are_config_errors() {
        assert!(matches!(ExperimentConfig::from_json(r#"{"epoch": 3}"#), Err(CliError::Config(_))));
        assert!(matches!(ExperimentConfig::from_json("[1]"), Err(CliError::Config(_))));
        assert!(matches!(ExperimentConfig::from_json(r#"{"dataset": {"kind": "parquet"}}"#), Err(CliError::Config(_))));
    }

    #[test]
    fn echoed_config_round_trips() {
        let mut c = ExperimentConfig::default();
        c.train.epochs = 7;
        c.train.tau = 0.3;
        c.label = Some("B".into());
        c.dataset = DatasetSpec::Csv { path: "data.csv".into(), classes_per_task: 3, test_fraction: 0.25 };
        let text = serde_json::to_string(&c.to_json()).unwrap();
        assert_eq!(ExperimentConfig::from_json(&text).unwrap(), c);
    }

    #[test]
    fn missing_data_file_is_a_data_error() {
        let d = DatasetSpec::Csv { path: "/nonexistent/agla.csv".into(), classes_per_task: 2, test_fraction: 0.2 };
        assert!(matches!(d.load(), Err(CliError::Data(_))));
    }
}
