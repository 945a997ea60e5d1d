//! Samples, task streams, and dataset sources.

mod idx;
mod synthetic;
mod tabular;

pub use idx::{load_idx_dataset, parse_idx_images, parse_idx_labels, IdxSplit};
pub use synthetic::{generate_synthetic_stream, SyntheticSpec};
pub use tabular::load_csv_dataset;

use std::collections::BTreeMap;

use crate::error::{AglaError, Result};
use crate::scalar::Scalar;

/// One labelled input. `y` is the stream-wide class index.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample<S> {
    pub x: Vec<S>,
    pub y: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Task<S> {
    pub classes: Vec<usize>,
    pub train: Vec<Sample<S>>,
    pub test: Vec<Sample<S>>,
}

/// Ordered tasks with pairwise disjoint class sets.
///
/// Class indices are contiguous in task order: task 0 owns `0..c0`, task 1
/// owns `c0..c0+c1`, and so on, so a class-incremental head column equals
/// the class index and a task-incremental head column is `y - offset(task)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskStream<S> {
    tasks: Vec<Task<S>>,
    input_dim: usize,
    /// Original label for each class index.
    original_labels: Vec<i64>,
}

impl<S: Scalar> TaskStream<S> {
    /// Builds a stream from tasks whose samples carry original labels.
    /// Labels are remapped to contiguous indices in task order.
    pub fn from_labelled(tasks: Vec<(Vec<(Vec<S>, i64)>, Vec<(Vec<S>, i64)>)>) -> Result<Self> {
        if tasks.is_empty() {
            return Err(AglaError::Protocol("stream has no tasks".into()));
        }
        let mut index: BTreeMap<i64, (usize, usize)> = BTreeMap::new();
        let mut original_labels = Vec::new();
        let mut out = Vec::with_capacity(tasks.len());
        let mut input_dim = None;
        for (k, (train, test)) in tasks.into_iter().enumerate() {
            if train.is_empty() {
                return Err(AglaError::Protocol(format!("task {k} has no training samples")));
            }
            let mut labels: Vec<i64> = train.iter().map(|s| s.1).collect();
            labels.sort_unstable();
            labels.dedup();
            let mut classes = Vec::new();
            for l in labels {
                if let Some((owner, _)) = index.get(&l) {
                    return Err(AglaError::Protocol(format!("label {l} appears in tasks {owner} and {k}")));
                }
                let c = original_labels.len();
                index.insert(l, (k, c));
                original_labels.push(l);
                classes.push(c);
            }
            let mut map = |(x, l): (Vec<S>, i64), split: &str| -> Result<Sample<S>> {
                let d = *input_dim.get_or_insert(x.len());
                if x.len() != d || d == 0 {
                    return Err(AglaError::dim("task_stream", format!("sample width {} vs {d}", x.len())));
                }
                match index.get(&l) {
                    Some(&(owner, c)) if owner == k => Ok(Sample { x, y: c }),
                    _ => Err(AglaError::Protocol(format!("{split} label {l} of task {k} is not a training class of that task"))),
                }
            };
            let train = train.into_iter().map(|s| map(s, "train")).collect::<Result<Vec<_>>>()?;
            let test = test.into_iter().map(|s| map(s, "test")).collect::<Result<Vec<_>>>()?;
            out.push(Task { classes, train, test });
        }
        Ok(TaskStream {
            tasks: out,
            input_dim: input_dim.expect("non-empty"),
            original_labels,
        })
    }

    pub fn tasks(&self) -> &[Task<S>] {
        &self.tasks
    }

    pub fn task(&self, k: usize) -> &Task<S> {
        &self.tasks[k]
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn total_classes(&self) -> usize {
        self.original_labels.len()
    }

    pub fn original_label(&self, class: usize) -> i64 {
        self.original_labels[class]
    }

    /// First class index owned by task `k`.
    pub fn class_offset(&self, k: usize) -> usize {
        self.tasks[..k].iter().map(|t| t.classes.len()).sum()
    }

    /// Task owning class `y`.
    pub fn task_of(&self, y: usize) -> usize {
        let mut acc = 0;
        for (k, t) in self.tasks.iter().enumerate() {
            acc += t.classes.len();
            if y < acc {
                return k;
            }
        }
        panic!("class {y} outside the stream");
    }

    /// Total training samples across tasks.
    pub fn train_size(&self) -> usize {
        self.tasks.iter().map(|t| t.train.len()).sum()
    }
}

/// Row-major matrix of the inputs of `samples`.
pub fn stack_inputs<S: Scalar>(samples: &[&Sample<S>]) -> Vec<S> {
    samples.iter().flat_map(|s| s.x.iter().copied()).collect()
}
