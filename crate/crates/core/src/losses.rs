//! Cross-entropy, logit-matching and distillation terms, and their
//! assessor-weighted combination.
//!
//! All batched helpers return a `[rows, 1]` column of per-sample losses so
//! callers can weight samples individually before reducing.

use std::sync::atomic::{AtomicBool, Ordering};

use crate::error::{AglaError, Result};
use crate::ndmath::{Tape, Var};
use crate::scalar::Scalar;

/// Per-sample `(alpha, beta, gamma)`.
///
/// The assessor always produces values strictly inside `(0, 1)`; fixed
/// ablation constants may sit on the closed interval (e.g. `alpha = 1`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetaWeights<S> {
    pub alpha: S,
    pub beta: S,
    pub gamma: S,
}

impl<S: Scalar> MetaWeights<S> {
    pub fn new(alpha: S, beta: S, gamma: S) -> Result<Self> {
        for (name, v) in [("alpha", alpha), ("beta", beta), ("gamma", gamma)] {
            if !(v >= S::zero() && v <= S::one()) {
                return Err(AglaError::Parameter(format!("{name} = {v} outside [0, 1]")));
            }
        }
        Ok(MetaWeights { alpha, beta, gamma })
    }

    pub fn from_array(w: [S; 3]) -> Result<Self> {
        Self::new(w[0], w[1], w[2])
    }

    /// DER weight `lambda` for task `k` (1-based).
    pub fn lambda(&self, k: usize) -> S {
        schedule(self.beta, k)
    }

    /// Distillation weight `pi` for task `k` (1-based).
    pub fn pi(&self, k: usize) -> S {
        schedule(self.gamma, k)
    }
}

/// `k * w` for `k >= 2`, zero on the first task (no memory exists yet).
pub fn schedule<S: Scalar>(w: S, k: usize) -> S {
    if k >= 2 {
        S::of_usize(k) * w
    } else {
        S::zero()
    }
}

fn width(tape: &Tape<impl Scalar>, v: Var) -> usize {
    *tape.shape(v).last().expect("non-empty shape")
}

fn rows(tape: &Tape<impl Scalar>, v: Var) -> usize {
    let s = tape.shape(v);
    if s.len() == 1 {
        1
    } else {
        s[0]
    }
}

/// Per-row `-log softmax(o)[y]`, via log-sum-exp.
pub fn ce_rows<S: Scalar>(tape: &mut Tape<S>, logits: Var, labels: &[usize]) -> Result<Var> {
    let (n, c) = (rows(tape, logits), width(tape, logits));
    if labels.len() != n {
        return Err(AglaError::dim("ce_loss", format!("{} labels for {n} rows", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
        return Err(AglaError::Index { label: bad, width: c });
    }
    let mut onehot = vec![S::zero(); n * c];
    for (i, &y) in labels.iter().enumerate() {
        onehot[i * c + y] = S::one();
    }
    let logp = tape.log_softmax(logits)?;
    let mask = tape.constant(tape.shape(logits).to_vec(), onehot)?;
    let picked = tape.mul(logp, mask)?;
    let s = tape.sum(picked, Some(1))?;
    Ok(tape.scale(s, -S::one()))
}

static WIDTH_WARNED: AtomicBool = AtomicBool::new(false);

/// Restricts `o` to the first `width(h)` logits, the classes the previous
/// model knew about.
fn align_to_stored<S: Scalar>(tape: &mut Tape<S>, o: Var, h: Var, op: &'static str) -> Result<Var> {
    let (wo, wh) = (width(tape, o), width(tape, h));
    if rows(tape, o) != rows(tape, h) {
        return Err(AglaError::dim(op, format!("{:?} vs {:?}", tape.shape(o), tape.shape(h))));
    }
    match wh.cmp(&wo) {
        std::cmp::Ordering::Equal => Ok(o),
        std::cmp::Ordering::Less => {
            if !WIDTH_WARNED.swap(true, Ordering::Relaxed) {
                log::warn!("{op}: stored logits are {wh} wide, current {wo}; comparing the first {wh}");
            }
            tape.slice(o, 1, 0, wh)
        }
        std::cmp::Ordering::Greater => Err(AglaError::dim(op, format!("stored logits ({wh}) wider than current ({wo})"))),
    }
}

/// Per-row `mean((o - h)^2) + ce(o, y)`; no softmax on either side.
pub fn der_rows<S: Scalar>(tape: &mut Tape<S>, o: Var, h: Var, labels: &[usize]) -> Result<Var> {
    let ce = ce_rows(tape, o, labels)?;
    let l2 = mse_rows(tape, o, h)?;
    tape.add(l2, ce)
}

/// Per-row mean squared logit difference over the stored width.
pub fn mse_rows<S: Scalar>(tape: &mut Tape<S>, o: Var, h: Var) -> Result<Var> {
    let o = align_to_stored(tape, o, h, "der_loss")?;
    let d = tape.sub(o, h)?;
    let sq = tape.mul(d, d)?;
    tape.mean(sq, Some(1))
}

/// Per-row `-sum_c softmax(h/T)_c * log softmax(o/T)_c`.
pub fn distill_rows<S: Scalar>(tape: &mut Tape<S>, o: Var, h: Var, temperature: S) -> Result<Var> {
    if !(temperature > S::zero()) {
        return Err(AglaError::Parameter(format!("temperature must be positive, got {temperature}")));
    }
    let o = align_to_stored(tape, o, h, "distill_loss")?;
    let inv = S::one() / temperature;
    let hs = tape.scale(h, inv);
    let target = tape.softmax(hs)?;
    // the target distribution is a fixed label, not a gradient path
    let target = tape.constant(tape.shape(target).to_vec(), tape.value(target).to_vec())?;
    let os = tape.scale(o, inv);
    let logq = tape.log_softmax(os)?;
    let prod = tape.mul(target, logq)?;
    let s = tape.sum(prod, Some(1))?;
    Ok(tape.scale(s, -S::one()))
}

pub fn ce_loss<S: Scalar>(tape: &mut Tape<S>, logits: Var, label: usize) -> Result<Var> {
    let r = ce_rows(tape, logits, &[label])?;
    tape.sum(r, None)
}

pub fn der_loss<S: Scalar>(tape: &mut Tape<S>, o: Var, h: Var, label: usize) -> Result<Var> {
    let r = der_rows(tape, o, h, &[label])?;
    tape.sum(r, None)
}

pub fn distill_loss<S: Scalar>(tape: &mut Tape<S>, o: Var, h: Var, temperature: S) -> Result<Var> {
    let r = distill_rows(tape, o, h, temperature)?;
    tape.sum(r, None)
}

/// Which memory terms participate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossTerms<S> {
    pub der: bool,
    pub distill: bool,
    pub temperature: S,
}

impl<S: Scalar> Default for LossTerms<S> {
    fn default() -> Self {
        LossTerms {
            der: true,
            distill: true,
            temperature: S::of(2.0),
        }
    }
}

/// One mini-batch laid out as current-task rows followed by memory rows.
#[derive(Clone, Copy, Debug)]
pub struct LossBatch<'a, S> {
    /// `[rows, classes]` logits `o` for every row.
    pub logits: Var,
    pub labels: &'a [usize],
    /// `[rows, 3]` columns `alpha, beta, gamma`.
    pub weights: Var,
    /// Rows `0..current` come from the current task, the rest from memory.
    pub current: usize,
    /// `[rows - current, w_h]` stored logits `h` for the memory rows.
    pub stored: Option<Var>,
    /// Per-memory-row multiplier: 1 for originals, the normalised COS
    /// weight for augmented copies. Treated as a constant.
    pub memory_scale: &'a [S],
    /// 1-based task index `k`.
    pub task: usize,
}

/// Mean over rows of
/// `alpha * ce` for current rows and
/// `scale * (alpha * ce + lambda * (mse + ce) + pi * distill)` for memory rows,
/// with `lambda = k * beta`, `pi = k * gamma` from task 2 on.
pub fn combined_loss<S: Scalar>(tape: &mut Tape<S>, batch: &LossBatch<'_, S>, terms: &LossTerms<S>) -> Result<Var> {
    if batch.task < 1 {
        return Err(AglaError::Parameter("task index k must be >= 1".into()));
    }
    let n = rows(tape, batch.logits);
    if batch.current > n {
        return Err(AglaError::dim("combined_loss", "more current rows than rows"));
    }
    if tape.shape(batch.weights) != [n, 3] {
        return Err(AglaError::dim("combined_loss", format!("weights {:?} for {n} rows", tape.shape(batch.weights))));
    }
    let n_mem = n - batch.current;
    if batch.memory_scale.len() != n_mem {
        return Err(AglaError::dim("combined_loss", format!("{} memory scales for {n_mem} memory rows", batch.memory_scale.len())));
    }
    let ce = ce_rows(tape, batch.logits, batch.labels)?;
    let alpha = tape.slice(batch.weights, 1, 0, 1)?;
    let weighted_ce = tape.mul(alpha, ce)?;
    if n_mem == 0 {
        return tape.mean(weighted_ce, None);
    }

    let mut mem = tape.slice(weighted_ce, 0, batch.current, n_mem)?;
    if batch.task >= 2 && (terms.der || terms.distill) {
        let h = batch
            .stored
            .ok_or_else(|| AglaError::Contract("memory rows without stored logits".into()))?;
        let k = S::of_usize(batch.task);
        let o_mem = tape.slice(batch.logits, 0, batch.current, n_mem)?;
        let w_mem = tape.slice(batch.weights, 0, batch.current, n_mem)?;
        if terms.der {
            let mse = mse_rows(tape, o_mem, h)?;
            let ce_mem = tape.slice(ce, 0, batch.current, n_mem)?;
            let der = tape.add(mse, ce_mem)?;
            let beta = tape.slice(w_mem, 1, 1, 1)?;
            let lambda = tape.scale(beta, k);
            let t = tape.mul(lambda, der)?;
            mem = tape.add(mem, t)?;
        }
        if terms.distill {
            let dist = distill_rows(tape, o_mem, h, terms.temperature)?;
            let gamma = tape.slice(w_mem, 1, 2, 1)?;
            let pi = tape.scale(gamma, k);
            let t = tape.mul(pi, dist)?;
            mem = tape.add(mem, t)?;
        }
    }
    if batch.memory_scale.iter().any(|&s| s != S::one()) {
        let s = tape.constant(vec![n_mem, 1], batch.memory_scale.to_vec())?;
        mem = tape.mul(mem, s)?;
    }
    let all = if batch.current > 0 {
        let cur = tape.slice(weighted_ce, 0, 0, batch.current)?;
        tape.concat(&[cur, mem], 0)?
    } else {
        mem
    };
    tape.mean(all, None)
}

/// `[rows, 3]` constant weight matrix repeating one triple.
pub fn constant_weights<S: Scalar>(tape: &mut Tape<S>, rows: usize, w: MetaWeights<S>) -> Result<Var> {
    let data = (0..rows).flat_map(|_| [w.alpha, w.beta, w.gamma]).collect();
    tape.constant(vec![rows, 3], data)
}
