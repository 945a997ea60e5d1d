use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{AglaError, Result};
use crate::ndmath::{Tape, Tensor, Var};
use crate::scalar::Scalar;

use super::{uniform_fan_in, zero_all, Dense, Module};

/// How classifier heads are organised across tasks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum HeadMode {
    /// One head per task, selected by the task id at train and test time.
    #[serde(rename = "task-il")]
    TaskIncremental,
    /// A single head over every class seen so far; no task id at test time.
    #[serde(rename = "class-il")]
    ClassIncremental,
}

/// Which head(s) produce the logits of a batch.
#[derive(Clone, Copy, Debug)]
pub enum HeadSelect<'a> {
    /// Class-IL: the single head.
    All,
    /// Task-IL: one head for the whole batch.
    Task(usize),
    /// Task-IL: head chosen per row.
    PerRow(&'a [usize]),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaseConfig {
    pub input: usize,
    pub hidden: usize,
    pub features: usize,
}

impl BaseConfig {
    pub fn new(input: usize) -> Self {
        BaseConfig {
            input,
            hidden: 128,
            features: 64,
        }
    }
}

/// Two-layer ReLU feature extractor followed by classifier head(s).
#[derive(Clone, Debug, PartialEq)]
pub struct BaseLearner<S> {
    config: BaseConfig,
    mode: HeadMode,
    hidden: Dense<S>,
    feature: Dense<S>,
    heads: Vec<Dense<S>>,
}

const BACKBONE_PARAMS: usize = 4;

impl<S: Scalar> BaseLearner<S> {
    /// A model with no head yet; call [`expand_head`](Self::expand_head) per task.
    pub fn new<R: Rng + ?Sized>(config: BaseConfig, mode: HeadMode, rng: &mut R) -> Self {
        BaseLearner {
            config,
            mode,
            hidden: Dense::init(rng, config.input, config.hidden),
            feature: Dense::init(rng, config.hidden, config.features),
            heads: Vec::new(),
        }
    }

    pub fn config(&self) -> BaseConfig {
        self.config
    }

    pub fn mode(&self) -> HeadMode {
        self.mode
    }

    pub fn head_count(&self) -> usize {
        self.heads.len()
    }

    pub fn head_width(&self, head: usize) -> Option<usize> {
        self.heads.get(head).map(Dense::output)
    }

    /// Total output classes across all heads.
    pub fn total_classes(&self) -> usize {
        self.heads.iter().map(Dense::output).sum()
    }

    pub fn set_zero(&mut self) {
        zero_all(self.params_mut());
    }

    /// Adds `new_classes` outputs. Class-IL widens the single head keeping
    /// existing columns bit-for-bit; task-IL appends a new head.
    pub fn expand_head<R: Rng + ?Sized>(&mut self, new_classes: usize, rng: &mut R) -> Result<()> {
        if new_classes == 0 {
            return Err(AglaError::Parameter("expand_head needs at least one class".into()));
        }
        let d = self.config.features;
        match (self.mode, self.heads.first_mut()) {
            (HeadMode::ClassIncremental, Some(head)) => {
                let w = uniform_fan_in(rng, d, d * new_classes);
                let b = uniform_fan_in(rng, d, new_classes);
                head.weight.append_columns(&w, new_classes);
                head.bias.append_columns(&b, new_classes);
            }
            _ => self.heads.push(Dense::init(rng, d, new_classes)),
        }
        Ok(())
    }

    fn check_select(&self, heads: HeadSelect<'_>, rows: usize) -> Result<()> {
        if self.heads.is_empty() {
            return Err(AglaError::Contract("model has no classifier head yet".into()));
        }
        match (self.mode, heads) {
            (HeadMode::ClassIncremental, HeadSelect::All) => Ok(()),
            (HeadMode::ClassIncremental, _) => {
                Err(AglaError::Mode("task id given to a class-incremental model".into()))
            }
            (HeadMode::TaskIncremental, HeadSelect::All) => {
                Err(AglaError::Mode("task-incremental model needs a task id".into()))
            }
            (HeadMode::TaskIncremental, HeadSelect::Task(t)) => self.check_head(t),
            (HeadMode::TaskIncremental, HeadSelect::PerRow(ids)) => {
                if ids.len() != rows {
                    return Err(AglaError::dim("base_forward", format!("{} task ids for {rows} rows", ids.len())));
                }
                let w = self.heads[self.check_head_idx(ids[0])?].output();
                for &t in ids {
                    let h = self.check_head_idx(t)?;
                    if self.heads[h].output() != w {
                        return Err(AglaError::dim("base_forward", "mixed-task batch over heads of different widths"));
                    }
                }
                Ok(())
            }
        }
    }

    fn check_head_idx(&self, t: usize) -> Result<usize> {
        self.check_head(t).map(|_| t)
    }

    fn check_head(&self, t: usize) -> Result<()> {
        if t < self.heads.len() {
            Ok(())
        } else {
            Err(AglaError::Mode(format!("no head for task index {t} ({} heads)", self.heads.len())))
        }
    }

    /// Records the forward pass on `tape`. Returns `(logits, features)`.
    pub fn forward_tape(
        &self,
        tape: &mut Tape<S>,
        vars: &[Var],
        x: Var,
        heads: HeadSelect<'_>,
    ) -> Result<(Var, Var)> {
        let xs = tape.shape(x).to_vec();
        let rows = if xs.len() == 1 { 1 } else { xs[0] };
        if *xs.last().unwrap_or(&0) != self.config.input {
            return Err(AglaError::dim("base_forward", format!("input {xs:?}, model expects width {}", self.config.input)));
        }
        self.check_select(heads, rows)?;
        let h = self.hidden.forward(tape, &vars[0..2], x)?;
        let h = tape.relu(h);
        let f = self.feature.forward(tape, &vars[2..4], h)?;
        let f = tape.relu(f);
        let head_vars = |t: usize| &vars[BACKBONE_PARAMS + 2 * t..BACKBONE_PARAMS + 2 * t + 2];
        let logits = match heads {
            HeadSelect::All => self.heads[0].forward(tape, head_vars(0), f)?,
            HeadSelect::Task(t) => self.heads[t].forward(tape, head_vars(t), f)?,
            HeadSelect::PerRow(ids) => {
                let mut tasks: Vec<usize> = ids.to_vec();
                tasks.sort_unstable();
                tasks.dedup();
                let mut acc: Option<Var> = None;
                for t in tasks {
                    let o = self.heads[t].forward(tape, head_vars(t), f)?;
                    if ids.iter().all(|&i| i == t) {
                        acc = Some(o);
                        break;
                    }
                    let mask: Vec<S> = ids.iter().map(|&i| if i == t { S::one() } else { S::zero() }).collect();
                    let m = tape.constant(vec![rows, 1], mask)?;
                    let masked = tape.mul(o, m)?;
                    acc = Some(match acc {
                        Some(a) => tape.add(a, masked)?,
                        None => masked,
                    });
                }
                acc.expect("at least one row")
            }
        };
        Ok((logits, f))
    }

    /// Tape-free feature extraction for a row-major `[rows, input]` batch.
    pub fn features(&self, x: &[S], rows: usize) -> Vec<S> {
        let h = self.hidden.eval(x, rows, true);
        self.feature.eval(&h, rows, true)
    }

    /// Tape-free logits `o`.
    pub fn logits(&self, x: &Tensor<S>, heads: HeadSelect<'_>) -> Result<Tensor<S>> {
        let rows = x.rows();
        if x.cols() != self.config.input {
            return Err(AglaError::dim("base_forward", format!("input {:?}, model expects width {}", x.shape(), self.config.input)));
        }
        self.check_select(heads, rows)?;
        let f = self.features(x.data(), rows);
        let data = match heads {
            HeadSelect::All => self.heads[0].eval(&f, rows, false),
            HeadSelect::Task(t) => self.heads[t].eval(&f, rows, false),
            HeadSelect::PerRow(ids) => {
                let d = self.config.features;
                let mut out = Vec::new();
                for (r, &t) in ids.iter().enumerate() {
                    out.extend(self.heads[t].eval(&f[r * d..(r + 1) * d], 1, false));
                }
                out
            }
        };
        let width = data.len() / rows;
        Tensor::new(vec![rows, width], data)
    }

    pub fn snapshot(&self) -> ModelSnapshot<S> {
        let mut inner = self.clone();
        for p in inner.params_mut() {
            p.set_requires_grad(false);
        }
        ModelSnapshot { inner }
    }
}

impl<S: Scalar> Module<S> for BaseLearner<S> {
    fn params(&self) -> Vec<&Tensor<S>> {
        let mut v = vec![&self.hidden.weight, &self.hidden.bias, &self.feature.weight, &self.feature.bias];
        for h in &self.heads {
            v.push(&h.weight);
            v.push(&h.bias);
        }
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<S>> {
        let mut v = vec![
            &mut self.hidden.weight,
            &mut self.hidden.bias,
            &mut self.feature.weight,
            &mut self.feature.bias,
        ];
        for h in &mut self.heads {
            v.push(&mut h.weight);
            v.push(&mut h.bias);
        }
        v
    }

    fn param_names(&self) -> Vec<String> {
        let mut v: Vec<String> = ["hidden.weight", "hidden.bias", "feature.weight", "feature.bias"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        for i in 0..self.heads.len() {
            v.push(format!("head{i}.weight"));
            v.push(format!("head{i}.bias"));
        }
        v
    }
}

/// Frozen copy of a [`BaseLearner`] producing the previous-task logits `h`.
///
/// Only tape-free evaluation is exposed, so a snapshot can neither be
/// mutated nor record tape nodes.
#[derive(Clone, Debug)]
pub struct ModelSnapshot<S> {
    inner: BaseLearner<S>,
}

impl<S: Scalar> ModelSnapshot<S> {
    pub fn logits(&self, x: &Tensor<S>, heads: HeadSelect<'_>) -> Result<Tensor<S>> {
        self.inner.logits(x, heads)
    }

    pub fn features(&self, x: &[S], rows: usize) -> Vec<S> {
        self.inner.features(x, rows)
    }

    pub fn mode(&self) -> HeadMode {
        self.inner.mode()
    }

    pub fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    pub fn total_classes(&self) -> usize {
        self.inner.total_classes()
    }

    pub fn params(&self) -> Vec<&Tensor<S>> {
        self.inner.params()
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn model(mode: HeadMode) -> (BaseLearner<f64>, ChaCha8Rng) {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        (BaseLearner::new(BaseConfig::new(5), mode, &mut rng), rng)
    }

    fn input(rows: usize) -> Tensor<f64> {
        Tensor::new(vec![rows, 5], (0..rows * 5).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap()
    }

    #[test]
    fn zero_model_gives_zero_logits() {
        let (mut m, mut rng) = model(HeadMode::ClassIncremental);
        m.expand_head(3, &mut rng).unwrap();
        m.set_zero();
        let o = m.logits(&input(4), HeadSelect::All).unwrap();
        assert!(o.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn class_il_width_grows() {
        let (mut m, mut rng) = model(HeadMode::ClassIncremental);
        m.expand_head(2, &mut rng).unwrap();
        m.expand_head(2, &mut rng).unwrap();
        assert_eq!(m.logits(&input(2), HeadSelect::All).unwrap().shape(), &[2, 4]);
        assert_eq!(m.head_count(), 1);
    }

    #[test]
    fn task_il_appends_heads() {
        let (mut m, mut rng) = model(HeadMode::TaskIncremental);
        for _ in 0..3 {
            m.expand_head(2, &mut rng).unwrap();
        }
        assert_eq!(m.head_count(), 3);
        assert_eq!(m.logits(&input(1), HeadSelect::Task(2)).unwrap().shape(), &[1, 2]);
    }

    #[test]
    fn mode_errors() {
        let (mut m, mut rng) = model(HeadMode::ClassIncremental);
        m.expand_head(2, &mut rng).unwrap();
        assert!(matches!(m.logits(&input(1), HeadSelect::Task(0)), Err(AglaError::Mode(_))));
        let (mut t, mut rng) = model(HeadMode::TaskIncremental);
        t.expand_head(2, &mut rng).unwrap();
        assert!(matches!(t.logits(&input(1), HeadSelect::All), Err(AglaError::Mode(_))));
        assert!(matches!(t.logits(&input(1), HeadSelect::Task(1)), Err(AglaError::Mode(_))));
    }

    #[test]
    fn expansion_preserves_old_logits() {
        let (mut m, mut rng) = model(HeadMode::ClassIncremental);
        m.expand_head(2, &mut rng).unwrap();
        let x = input(6);
        let before = m.logits(&x, HeadSelect::All).unwrap();
        m.expand_head(2, &mut rng).unwrap();
        let after = m.logits(&x, HeadSelect::All).unwrap();
        for r in 0..6 {
            assert_eq!(&after.row(r)[..2], before.row(r));
        }
    }

    #[test]
    fn deterministic_logits() {
        let (mut m, mut rng) = model(HeadMode::ClassIncremental);
        m.expand_head(2, &mut rng).unwrap();
        let x = input(3);
        assert_eq!(m.logits(&x, HeadSelect::All).unwrap(), m.logits(&x, HeadSelect::All).unwrap());
    }

    #[test]
    fn tape_forward_matches_plain_forward() {
        let (mut m, mut rng) = model(HeadMode::TaskIncremental);
        m.expand_head(2, &mut rng).unwrap();
        m.expand_head(2, &mut rng).unwrap();
        let x = input(4);
        let ids = [1, 0, 0, 1];
        let mut tape = Tape::new();
        let vars = m.bind(&mut tape, true);
        let xv = tape.leaf(&x);
        let (o, _) = m.forward_tape(&mut tape, &vars, xv, HeadSelect::PerRow(&ids)).unwrap();
        let plain = m.logits(&x, HeadSelect::PerRow(&ids)).unwrap();
        for (a, b) in tape.value(o).iter().zip(plain.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn snapshot_is_frozen() {
        let (mut m, mut rng) = model(HeadMode::ClassIncremental);
        m.expand_head(2, &mut rng).unwrap();
        let snap = m.snapshot();
        let x = input(3);
        let at_snapshot = m.logits(&x, HeadSelect::All).unwrap();
        assert_eq!(snap.logits(&x, HeadSelect::All).unwrap(), at_snapshot);
        assert_eq!(snap.param_count(), m.param_count());
        assert!(snap.params().iter().all(|p| !p.requires_grad()));
        for p in m.params_mut() {
            p.data_mut().iter_mut().for_each(|v| *v += 0.5);
        }
        assert_eq!(snap.logits(&x, HeadSelect::All).unwrap(), at_snapshot);
    }
}
