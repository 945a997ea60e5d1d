use std::collections::hash_map::DefaultHasher;
use std::collections::BTreeMap;
use std::hash::{Hash, Hasher};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::{Method, Toggles, TrainConfig};
use crate::cos::{normalize_weights, CosStats};
use crate::data::{Sample, TaskStream};
use crate::error::{AglaError, Result};
use crate::eval::{average_accuracy, average_forgetting, evaluate, AccuracyMatrix, Forgetting};
use crate::losses::{combined_loss, constant_weights, LossBatch, LossTerms, MetaWeights};
use crate::memory::{rebalance_target, ReservoirBuffer};
use crate::ndmath::{SgdState, Tape, Tensor, Var};
use crate::nets::{Assessor, AssessorConfig, BaseConfig, BaseLearner, HeadMode, HeadSelect, Module};
use crate::scalar::Scalar;
use crate::transforms::make_validation_set;

const SEED_INIT: u64 = 1;
const SEED_SHUFFLE: u64 = 2;
const SEED_MEMORY: u64 = 3;
const SEED_AUGMENT: u64 = 4;
const SEED_VALIDATION: u64 = 5;

/// Independent stream seed for `(tag, k)` derived from the run seed.
pub fn sub_seed(seed: u64, tag: u64, k: u64) -> u64 {
    let mut z = seed
        .wrapping_add(tag.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(k.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-epoch record. `task` and `epoch` are 1-based.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TraceRecord {
    pub task: usize,
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub mean_alpha: f64,
    pub mean_beta: f64,
    pub mean_gamma: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentResult {
    pub method: Method,
    pub mode: HeadMode,
    pub seed: u64,
    pub matrix: AccuracyMatrix,
    pub traces: Vec<TraceRecord>,
    pub average_accuracy: f64,
    pub forgetting: Forgetting,
}

/// One training row. Current-task rows have no stored logits and no group.
#[derive(Clone, Debug)]
struct Row<S> {
    x: Vec<S>,
    /// Label in the head's column space.
    y: usize,
    head: usize,
    stored: Vec<S>,
    memory: bool,
    /// COS group of an augmented copy.
    group: Option<usize>,
}

/// A mini-batch laid out current rows first.
struct Batch<S> {
    rows: usize,
    x: Vec<S>,
    labels: Vec<usize>,
    heads: Vec<usize>,
    current: usize,
    stored: Vec<S>,
    stored_width: usize,
    memory_scale: Vec<S>,
}

#[derive(Default)]
struct EpochStats {
    rows: f64,
    train: f64,
    val: f64,
    w: [f64; 3],
}

fn param_hash<S: Scalar>(m: &impl Module<S>) -> u64 {
    let mut h = DefaultHasher::new();
    for p in m.params() {
        p.shape().hash(&mut h);
        for v in p.data() {
            v.as_f64().to_bits().hash(&mut h);
        }
    }
    h.finish()
}

/// Base learner, assessor, optimisers and memory carried across tasks.
#[derive(Clone, Debug)]
pub struct ContinualLearner<S: Scalar> {
    config: TrainConfig,
    toggles: Toggles,
    base: BaseLearner<S>,
    assessor: Assessor<S>,
    base_opt: SgdState<S>,
    assessor_opt: SgdState<S>,
    memory: ReservoirBuffer<S>,
    rng: ChaCha8Rng,
    next_task: usize,
}

impl<S: Scalar> ContinualLearner<S> {
    pub fn new(config: &TrainConfig, input_dim: usize) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(config.seed, SEED_INIT, 0));
        let base = BaseLearner::new(BaseConfig::new(input_dim), config.mode, &mut rng);
        let assessor = Assessor::new(AssessorConfig { input: input_dim, layers: config.assessor_layers }, &mut rng)?;
        Ok(ContinualLearner {
            toggles: config.effective_toggles(),
            base,
            assessor,
            base_opt: Self::optimiser(config, config.lr)?,
            assessor_opt: Self::optimiser(config, config.assessor_lr)?,
            memory: ReservoirBuffer::new(config.effective_memory(), sub_seed(config.seed, SEED_MEMORY, 0)),
            rng,
            next_task: 0,
            config: config.clone(),
        })
    }

    fn optimiser(c: &TrainConfig, lr: f64) -> Result<SgdState<S>> {
        SgdState::new(S::of(lr), S::of(c.momentum), S::of(c.weight_decay))
    }

    pub fn base(&self) -> &BaseLearner<S> {
        &self.base
    }

    pub fn assessor(&self) -> &Assessor<S> {
        &self.assessor
    }

    pub fn memory(&self) -> &ReservoirBuffer<S> {
        &self.memory
    }

    pub fn toggles(&self) -> Toggles {
        self.toggles
    }

    /// 0-based index of the task `run_task` expects next.
    pub fn next_task(&self) -> usize {
        self.next_task
    }

    fn label(&self, stream: &TaskStream<S>, y: usize, head: usize) -> usize {
        match self.config.mode {
            HeadMode::ClassIncremental => y,
            HeadMode::TaskIncremental => y - stream.class_offset(head),
        }
    }

    fn current_rows(&self, stream: &TaskStream<S>, k: usize) -> Vec<Row<S>> {
        stream
            .task(k)
            .train
            .iter()
            .map(|s| Row {
                x: s.x.clone(),
                y: self.label(stream, s.y, k),
                head: k,
                stored: Vec::new(),
                memory: false,
                group: None,
            })
            .collect()
    }

    fn memory_rows(&self, stream: &TaskStream<S>, k: usize) -> Result<Vec<Row<S>>> {
        if k == 0 || self.memory.is_empty() {
            return Ok(Vec::new());
        }
        let entries = if self.toggles.augment {
            let task = stream.task(k);
            let per_class = task.train.len() / task.classes.len();
            let ratio = self.config.augment_ratio;
            self.memory.augment(
                &self.config.transforms,
                |stored| rebalance_target(per_class, stored, ratio),
                sub_seed(self.config.seed, SEED_AUGMENT, k as u64),
            )?
        } else {
            self.memory.entries().cloned().collect()
        };
        let mut groups = BTreeMap::new();
        Ok(entries
            .into_iter()
            .map(|e| {
                let group = (e.transform > 0).then(|| {
                    let next = groups.len();
                    *groups.entry(e.origin).or_insert(next)
                });
                Row { y: self.label(stream, e.y, e.task), head: e.task, stored: e.logits, memory: true, group, x: e.x }
            })
            .collect())
    }

    /// Algorithm body for task `k` (0-based): augment memory, build the
    /// validation set, alternate assessor and base updates per mini-batch,
    /// then store samples and refresh stored logits.
    pub fn run_task(&mut self, stream: &TaskStream<S>, k: usize) -> Result<Vec<TraceRecord>> {
        if k != self.next_task {
            return Err(AglaError::Protocol(format!("expected task {}, got {k}", self.next_task)));
        }
        if k >= stream.len() {
            return Err(AglaError::Protocol(format!("task {k} not in a {}-task stream", stream.len())));
        }
        if k > 0 && self.config.reset_assessor {
            self.assessor = Assessor::new(self.assessor.config(), &mut self.rng)?;
            self.assessor_opt.reset();
        }
        self.base.expand_head(stream.task(k).classes.len(), &mut self.rng)?;

        let mut rows = self.current_rows(stream, k);
        rows.extend(self.memory_rows(stream, k)?);
        let traces = self.train_rows(&rows, k, k + 1)?;

        for s in &stream.task(k).train {
            self.memory.insert(s, k);
        }
        if !self.memory.is_empty() {
            self.memory.refresh_logits(&self.base.snapshot())?;
        }
        self.next_task += 1;
        Ok(traces)
    }

    /// Pools every task and trains once; the joint upper bound.
    fn run_pooled(&mut self, stream: &TaskStream<S>) -> Result<Vec<TraceRecord>> {
        if self.next_task != 0 {
            return Err(AglaError::Protocol("pooled training needs a fresh learner".into()));
        }
        let mut rows = Vec::new();
        for k in 0..stream.len() {
            self.base.expand_head(stream.task(k).classes.len(), &mut self.rng)?;
            rows.extend(self.current_rows(stream, k));
        }
        let traces = self.train_rows(&rows, 0, stream.len())?;
        self.next_task = stream.len();
        Ok(traces)
    }

    fn train_rows(&mut self, rows: &[Row<S>], k: usize, trace_task: usize) -> Result<Vec<TraceRecord>> {
        let val_x: Vec<Vec<S>> = if self.toggles.random_transform {
            let samples: Vec<Sample<S>> = rows.iter().map(|r| Sample { x: r.x.clone(), y: r.y }).collect();
            make_validation_set(&samples, &self.config.transforms, sub_seed(self.config.seed, SEED_VALIDATION, k as u64))?
                .into_iter()
                .map(|s| s.x)
                .collect()
        } else {
            rows.iter().map(|r| r.x.clone()).collect()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(self.config.seed, SEED_SHUFFLE, k as u64));
        let mut order: Vec<usize> = (0..rows.len()).collect();
        let mut traces = Vec::with_capacity(self.config.epochs);
        for epoch in 0..self.config.epochs {
            let raw = self.cos_raw_weights(rows)?;
            order.shuffle(&mut rng);
            let mut stats = EpochStats::default();
            for chunk in order.chunks(self.config.batch_size) {
                let mut idx = chunk.to_vec();
                idx.sort_by_key(|&i| rows[i].memory);
                let train = self.batch(rows, &idx, &raw, |i| &rows[i].x)?;
                let val = self.batch(rows, &idx, &raw, |i| &val_x[i])?;
                let val_loss = self.assessor_step(&val, k + 1)?;
                let (train_loss, w) = self.base_step(&train, k + 1)?;
                let n = train.rows as f64;
                stats.rows += n;
                stats.train += train_loss * n;
                stats.val += val_loss * n;
                for (acc, v) in stats.w.iter_mut().zip(w) {
                    *acc += v;
                }
            }
            let n = stats.rows;
            let rec = TraceRecord {
                task: trace_task,
                epoch: epoch + 1,
                train_loss: stats.train / n,
                val_loss: stats.val / n,
                mean_alpha: stats.w[0] / n,
                mean_beta: stats.w[1] / n,
                mean_gamma: stats.w[2] / n,
            };
            log::debug!("{rec:?}");
            traces.push(rec);
        }
        Ok(traces)
    }

    /// Unnormalised COS weight per row, frozen for one epoch. Rows that are
    /// not augmented copies get 1.
    fn cos_raw_weights(&self, rows: &[Row<S>]) -> Result<Vec<S>> {
        let mut raw = vec![S::one(); rows.len()];
        if !self.toggles.cos_weights {
            return Ok(raw);
        }
        let aug: Vec<usize> = (0..rows.len()).filter(|&i| rows[i].group.is_some()).collect();
        if aug.is_empty() {
            return Ok(raw);
        }
        let d = self.base.config().features;
        let x: Vec<S> = aug.iter().flat_map(|&i| rows[i].x.iter().copied()).collect();
        let z = self.base.features(&x, aug.len());
        let n_groups = aug.iter().filter_map(|&i| rows[i].group).max().map_or(0, |g| g + 1);
        let mut groups: Vec<Vec<Vec<S>>> = vec![Vec::new(); n_groups];
        for (r, &i) in aug.iter().enumerate() {
            groups[rows[i].group.expect("augmented")].push(z[r * d..(r + 1) * d].to_vec());
        }
        let tau = S::of(self.config.tau);
        let stats = match self.config.ridge {
            Some(eps) => CosStats::compute(&groups, tau, S::of(eps))?,
            None => CosStats::compute_auto(&groups, tau)?,
        };
        for (r, &i) in aug.iter().enumerate() {
            raw[i] = stats.weight(rows[i].group.expect("augmented"), &z[r * d..(r + 1) * d])?;
        }
        Ok(raw)
    }

    fn batch<'a>(&self, rows: &[Row<S>], idx: &[usize], raw: &[S], input: impl Fn(usize) -> &'a [S]) -> Result<Batch<S>>
    where
        S: 'a,
    {
        let current = idx.iter().filter(|&&i| !rows[i].memory).count();
        let mem = &idx[current..];
        let stored_width = mem.first().map_or(0, |&i| rows[i].stored.len());
        if mem.iter().any(|&i| rows[i].stored.len() != stored_width) {
            return Err(AglaError::Contract("memory rows carry stored logits of different widths".into()));
        }
        let aug: Vec<usize> = mem.iter().copied().filter(|&i| rows[i].group.is_some()).collect();
        let wbar = if aug.is_empty() {
            Vec::new()
        } else {
            normalize_weights(&aug.iter().map(|&i| raw[i]).collect::<Vec<S>>())?
        };
        let mut next = wbar.iter();
        let memory_scale = mem
            .iter()
            .map(|&i| if rows[i].group.is_some() { *next.next().expect("one per copy") } else { S::one() })
            .collect();
        Ok(Batch {
            rows: idx.len(),
            x: idx.iter().flat_map(|&i| input(i).iter().copied()).collect(),
            labels: idx.iter().map(|&i| rows[i].y).collect(),
            heads: idx.iter().map(|&i| rows[i].head).collect(),
            current,
            stored: mem.iter().flat_map(|&i| rows[i].stored.iter().copied()).collect(),
            stored_width,
            memory_scale,
        })
    }

    fn fixed_weights(&self) -> Result<MetaWeights<S>> {
        let [a, b, g] = self.config.fixed_weights;
        MetaWeights::new(S::of(a), S::of(b), S::of(g))
    }

    fn loss(&self, tape: &mut Tape<S>, base_vars: &[Var], b: &Batch<S>, x: Var, weights: Var, task: usize) -> Result<Var> {
        let heads = match self.config.mode {
            HeadMode::ClassIncremental => HeadSelect::All,
            HeadMode::TaskIncremental => HeadSelect::PerRow(&b.heads),
        };
        let (logits, _) = self.base.forward_tape(tape, base_vars, x, heads)?;
        let n_mem = b.rows - b.current;
        let stored = if n_mem > 0 && b.stored_width > 0 {
            Some(tape.constant(vec![n_mem, b.stored_width], b.stored.clone())?)
        } else {
            None
        };
        let terms = LossTerms {
            der: self.toggles.der_loss,
            distill: self.toggles.distill_loss,
            temperature: S::of(self.config.temperature),
        };
        let batch = LossBatch {
            logits,
            labels: &b.labels,
            weights,
            current: b.current,
            stored,
            memory_scale: &b.memory_scale,
            task,
        };
        combined_loss(tape, &batch, &terms)
    }

    fn input(&self, tape: &mut Tape<S>, b: &Batch<S>) -> Result<Var> {
        tape.constant(vec![b.rows, self.base.config().input], b.x.clone())
    }

    /// Outer update on a validation batch: gradients reach only the
    /// assessor. Returns the validation loss before the step.
    fn assessor_step(&mut self, b: &Batch<S>, task: usize) -> Result<f64> {
        let mut tape = Tape::new();
        let base_vars = self.base.bind(&mut tape, false);
        let x = self.input(&mut tape, b)?;
        if !self.toggles.assessor {
            let w = constant_weights(&mut tape, b.rows, self.fixed_weights()?)?;
            let loss = self.loss(&mut tape, &base_vars, b, x, w, task)?;
            return Ok(tape.value(loss)[0].as_f64());
        }
        let before = self.config.check_invariants.then(|| param_hash(&self.base));
        let a_vars = self.assessor.bind(&mut tape, true);
        let (w, _) = self.assessor.forward_tape(&mut tape, &a_vars, x, &self.assessor.initial_state())?;
        let loss = self.loss(&mut tape, &base_vars, b, x, w, task)?;
        let value = tape.value(loss)[0];
        if !value.is_finite() {
            return Err(AglaError::Numeric(format!("validation loss is {value}")));
        }
        let grads = tape.backward(loss)?;
        self.assessor.zero_grad();
        self.assessor.accumulate_grads(&grads, &a_vars)?;
        self.assessor_opt.step(&mut self.assessor.params_mut())?;
        if before.is_some_and(|h| h != param_hash(&self.base)) {
            return Err(AglaError::Contract("assessor update changed the base learner".into()));
        }
        Ok(value.as_f64())
    }

    /// Inner update on a training batch with the assessor's weights held
    /// constant. Returns the loss and the summed weight columns.
    fn base_step(&mut self, b: &Batch<S>, task: usize) -> Result<(f64, [f64; 3])> {
        let before = self.config.check_invariants.then(|| param_hash(&self.assessor));
        let mut tape = Tape::new();
        let x = self.input(&mut tape, b)?;
        let w = if self.toggles.assessor {
            let xt = Tensor::new(vec![b.rows, self.base.config().input], b.x.clone())?;
            let rows = self.assessor.assess_batch(&xt)?;
            tape.constant(vec![b.rows, 3], rows.into_iter().flatten().collect())?
        } else {
            constant_weights(&mut tape, b.rows, self.fixed_weights()?)?
        };
        let mut sums = [0.0; 3];
        for (i, v) in tape.value(w).iter().enumerate() {
            sums[i % 3] += v.as_f64();
        }
        let vars = self.base.bind(&mut tape, true);
        let loss = self.loss(&mut tape, &vars, b, x, w, task)?;
        let value = tape.value(loss)[0];
        if !value.is_finite() {
            return Err(AglaError::Numeric(format!("training loss is {value}")));
        }
        let grads = tape.backward(loss)?;
        self.base.zero_grad();
        self.base.accumulate_grads(&grads, &vars)?;
        self.base_opt.step(&mut self.base.params_mut())?;
        if before.is_some_and(|h| h != param_hash(&self.assessor)) {
            return Err(AglaError::Contract("base update changed the assessor".into()));
        }
        Ok((value.as_f64(), sums))
    }
}

/// Trains on every task in order, filling the accuracy matrix after each.
/// The joint method trains once on the pooled stream and fills the final row.
pub fn run_experiment<S: Scalar>(stream: &TaskStream<S>, config: &TrainConfig) -> Result<ExperimentResult> {
    let mut learner = ContinualLearner::<S>::new(config, stream.input_dim())?;
    let k_total = stream.len();
    let mut matrix = AccuracyMatrix::new(k_total);
    let mut traces = Vec::new();
    if config.method == Method::Joint {
        traces = learner.run_pooled(stream)?;
        for j in 0..k_total {
            matrix.set(k_total - 1, j, evaluate(learner.base(), stream, j)?)?;
        }
    } else {
        for k in 0..k_total {
            traces.extend(learner.run_task(stream, k)?);
            for j in 0..=k {
                matrix.set(k, j, evaluate(learner.base(), stream, j)?)?;
            }
        }
    }
    Ok(ExperimentResult {
        method: config.method,
        mode: config.mode,
        seed: config.seed,
        average_accuracy: average_accuracy(&matrix)?,
        forgetting: average_forgetting(&matrix)?,
        matrix,
        traces,
    })
}

/// [`run_experiment`] with the method forced to a baseline.
pub fn run_baseline<S: Scalar>(kind: Method, stream: &TaskStream<S>, config: &TrainConfig) -> Result<ExperimentResult> {
    if kind == Method::Agla {
        return Err(AglaError::Parameter("agla is not a baseline".into()));
    }
    run_experiment(stream, &TrainConfig { method: kind, ..config.clone() })
}
