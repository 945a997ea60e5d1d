use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{AglaError, Result};
use crate::scalar::Scalar;

use super::TaskStream;

type Rows<S> = Vec<(Vec<S>, i64)>;

/// Groups by label (ascending), holds out the last `test_fraction` of each
/// class when `test` is absent, and chunks classes into tasks.
pub(crate) fn split_by_class<S: Scalar>(
    train: Rows<S>,
    test: Option<Rows<S>>,
    classes_per_task: usize,
    test_fraction: f64,
    max_train_per_class: Option<usize>,
) -> Result<TaskStream<S>> {
    if classes_per_task == 0 {
        return Err(AglaError::Parameter("classes_per_task must be >= 1".into()));
    }
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(AglaError::Parameter(format!("test_fraction {test_fraction} outside [0, 1)")));
    }
    let mut by_class: BTreeMap<i64, (Rows<S>, Rows<S>)> = BTreeMap::new();
    let has_test = test.is_some();
    for row in train {
        by_class.entry(row.1).or_default().0.push(row);
    }
    if let Some(test) = test {
        for row in test {
            by_class.entry(row.1).or_default().1.push(row);
        }
    }
    let mut classes: Vec<(Rows<S>, Rows<S>)> = Vec::new();
    for (label, (mut tr, mut te)) in by_class {
        if tr.is_empty() {
            return Err(AglaError::Protocol(format!("label {label} has test samples but no training samples")));
        }
        if !has_test {
            let n_test = (tr.len() as f64 * test_fraction).ceil() as usize;
            te = tr.split_off(tr.len() - n_test.min(tr.len() - 1));
        }
        if let Some(cap) = max_train_per_class {
            tr.truncate(cap.max(1));
        }
        classes.push((tr, te));
    }
    let tasks = classes
        .chunks(classes_per_task)
        .map(|chunk| {
            let mut tr = Vec::new();
            let mut te = Vec::new();
            for (a, b) in chunk {
                tr.extend(a.iter().cloned());
                te.extend(b.iter().cloned());
            }
            (tr, te)
        })
        .collect();
    TaskStream::from_labelled(tasks)
}

/// Headerless CSV: first column an integer label, remaining columns features.
pub fn load_csv_dataset<S: Scalar>(
    path: &Path,
    classes_per_task: usize,
    test_fraction: f64,
) -> Result<TaskStream<S>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| AglaError::Format { offset: 0, message: e.to_string() })?;
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| AglaError::Format {
            offset: e.position().map(|p| p.byte()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let offset = rec.position().map(|p| p.byte()).unwrap_or(0);
        let bad = |what: &str| AglaError::Format { offset, message: format!("unparseable {what}") };
        let label: i64 = rec.get(0).ok_or_else(|| bad("label"))?.trim().parse().map_err(|_| bad("label"))?;
        let x = rec
            .iter()
            .skip(1)
            .map(|f| f.trim().parse::<f64>().map(S::of).map_err(|_| bad("feature")))
            .collect::<Result<Vec<S>>>()?;
        rows.push((x, label));
    }
    split_by_class(rows, None, classes_per_task, test_fraction, None)
}
