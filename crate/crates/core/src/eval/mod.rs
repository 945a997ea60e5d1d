//! Accuracy matrix, average accuracy and forgetting.

use serde::Serialize;

use crate::data::{stack_inputs, Sample, TaskStream};
use crate::error::{AglaError, Result};
use crate::ndmath::Tensor;
use crate::nets::{BaseLearner, HeadMode, HeadSelect, ModelSnapshot};
use crate::scalar::Scalar;

/// Anything that maps inputs to logits the way a [`BaseLearner`] does.
pub trait Classifier<S: Scalar> {
    fn mode(&self) -> HeadMode;
    /// Number of output columns over all heads.
    fn total_classes(&self) -> usize;
    fn logits(&self, x: &Tensor<S>, heads: HeadSelect<'_>) -> Result<Tensor<S>>;
}

impl<S: Scalar> Classifier<S> for BaseLearner<S> {
    fn mode(&self) -> HeadMode {
        BaseLearner::mode(self)
    }
    fn total_classes(&self) -> usize {
        BaseLearner::total_classes(self)
    }
    fn logits(&self, x: &Tensor<S>, heads: HeadSelect<'_>) -> Result<Tensor<S>> {
        BaseLearner::logits(self, x, heads)
    }
}

impl<S: Scalar> Classifier<S> for ModelSnapshot<S> {
    fn mode(&self) -> HeadMode {
        ModelSnapshot::mode(self)
    }
    fn total_classes(&self) -> usize {
        ModelSnapshot::total_classes(self)
    }
    fn logits(&self, x: &Tensor<S>, heads: HeadSelect<'_>) -> Result<Tensor<S>> {
        ModelSnapshot::logits(self, x, heads)
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax<S: Scalar>(row: &[S]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate().skip(1) {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Fraction of `samples` classified correctly. `offset` is subtracted from
/// labels before comparison (the first class of a task-IL head).
pub fn accuracy<S: Scalar, C: Classifier<S> + ?Sized>(
    model: &C,
    samples: &[Sample<S>],
    heads: HeadSelect<'_>,
    offset: usize,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(AglaError::Parameter("no samples to evaluate".into()));
    }
    let d = samples[0].x.len();
    let refs: Vec<&Sample<S>> = samples.iter().collect();
    let x = Tensor::new(vec![samples.len(), d], stack_inputs(&refs))?;
    let o = model.logits(&x, heads)?;
    let correct = samples
        .iter()
        .enumerate()
        .filter(|(i, s)| argmax(o.row(*i)) + offset == s.y)
        .count();
    Ok(correct as f64 / samples.len() as f64)
}

/// Test accuracy on task `j` (0-based). Class-IL predicts over every output
/// column; task-IL uses head `j`.
pub fn evaluate<S: Scalar, C: Classifier<S> + ?Sized>(model: &C, stream: &TaskStream<S>, j: usize) -> Result<f64> {
    if j >= stream.len() {
        return Err(AglaError::Protocol(format!("task {j} not in a {}-task stream", stream.len())));
    }
    let offset = stream.class_offset(j);
    let end = offset + stream.task(j).classes.len();
    if model.total_classes() < end {
        return Err(AglaError::Protocol(format!("model has not seen task {j}")));
    }
    let test = &stream.task(j).test;
    match model.mode() {
        HeadMode::ClassIncremental => accuracy(model, test, HeadSelect::All, 0),
        HeadMode::TaskIncremental => accuracy(model, test, HeadSelect::Task(j), offset),
    }
}

/// `a[k][j]`: accuracy on task `j` after training task `k`, for `j <= k`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AccuracyMatrix {
    rows: Vec<Vec<Option<f64>>>,
}

impl AccuracyMatrix {
    pub fn new(tasks: usize) -> Self {
        AccuracyMatrix { rows: (0..tasks).map(|k| vec![None; k + 1]).collect() }
    }

    pub fn tasks(&self) -> usize {
        self.rows.len()
    }

    pub fn set(&mut self, k: usize, j: usize, acc: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&acc) {
            return Err(AglaError::Parameter(format!("accuracy {acc} outside [0, 1]")));
        }
        let cell = self
            .rows
            .get_mut(k)
            .and_then(|r| r.get_mut(j))
            .ok_or_else(|| AglaError::Parameter(format!("cell ({k}, {j}) outside the lower triangle")))?;
        *cell = Some(acc);
        Ok(())
    }

    pub fn get(&self, k: usize, j: usize) -> Option<f64> {
        self.rows.get(k).and_then(|r| r.get(j)).copied().flatten()
    }

    /// Defined cells as `(k, j, accuracy)` in row-major order.
    pub fn cells(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.rows
            .iter()
            .enumerate()
            .flat_map(|(k, r)| r.iter().enumerate().filter_map(move |(j, a)| a.map(|a| (k, j, a))))
    }

    /// Builds a matrix from full rows, e.g. `[[0.9], [0.8, 0.85]]`.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let mut m = AccuracyMatrix::new(rows.len());
        for (k, r) in rows.iter().enumerate() {
            if r.len() > k + 1 {
                return Err(AglaError::Parameter(format!("row {k} has {} entries", r.len())));
            }
            for (j, &a) in r.iter().enumerate() {
                m.set(k, j, a)?;
            }
        }
        Ok(m)
    }

    fn final_row(&self) -> Result<Vec<f64>> {
        let last = self
            .rows
            .last()
            .ok_or_else(|| AglaError::Parameter("empty accuracy matrix".into()))?;
        last.iter()
            .copied()
            .collect::<Option<Vec<f64>>>()
            .ok_or_else(|| AglaError::Protocol("final row of the accuracy matrix is incomplete".into()))
    }
}

/// `(1/K) sum_j a[K][j]`.
pub fn average_accuracy(m: &AccuracyMatrix) -> Result<f64> {
    let row = m.final_row()?;
    Ok(row.iter().sum::<f64>() / row.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Forgetting {
    pub value: f64,
    /// Set when there is no earlier row to forget from (one task, or only
    /// the final row filled), in which case `value` is 0.
    pub degenerate: bool,
}

/// `(1/(K-1)) sum_{j<K} max_{j<=l<=K} a[l][j] - a[K][j]`, over the tasks
/// that have at least one earlier measurement. The final row is part of the
/// max, so a task that improved contributes 0 rather than a negative term.
pub fn average_forgetting(m: &AccuracyMatrix) -> Result<Forgetting> {
    let last = m.final_row()?;
    let k = m.tasks();
    let mut total = 0.0;
    let mut counted = 0usize;
    for (j, &end) in last.iter().enumerate().take(k.saturating_sub(1)) {
        let earlier: Vec<f64> = (j..k - 1).filter_map(|l| m.get(l, j)).collect();
        if earlier.is_empty() {
            continue;
        }
        let peak = earlier.into_iter().fold(end, f64::max);
        total += peak - end;
        counted += 1;
    }
    if counted == 0 {
        return Ok(Forgetting { value: 0.0, degenerate: true });
    }
    Ok(Forgetting { value: total / counted as f64, degenerate: false })
}
