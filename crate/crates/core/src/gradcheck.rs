//! Finite-difference checks for every tape op and for the full networks.
//!
//! A [`GradCase`] is a scalar function of some leaf tensors. Its analytic
//! gradient comes from [`Tape::backward`]; the numeric one from central
//! differences. Large tensors are probed at a random subset of coordinates.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::losses::{combined_loss, constant_weights, ce_rows, LossBatch, LossTerms, MetaWeights};
use crate::ndmath::{Tape, Tensor, Var};
use crate::nets::{Assessor, AssessorConfig, AssessorState, BaseConfig, BaseLearner, HeadMode, HeadSelect, LstmCell, LstmState, Module, HIDDEN};

type Build = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>>;

pub struct GradCase {
    pub name: String,
    pub inputs: Vec<Tensor<f64>>,
    /// Coordinates of each input that are compared.
    pub probes: Vec<Vec<usize>>,
    pub step: f64,
    build: Build,
}

/// Elementwise `|a - b| / max(|a|, |b|, 1e-6)`.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

impl GradCase {
    /// Probes every coordinate of every input.
    pub fn new(name: impl Into<String>, inputs: Vec<Tensor<f64>>, build: Build) -> Self {
        let probes = inputs.iter().map(|t| (0..t.numel()).collect()).collect();
        GradCase { name: name.into(), inputs, probes, step: 1e-5, build }
    }

    /// Keeps at most `per_input` random coordinates of each input.
    pub fn subsample(mut self, per_input: usize, rng: &mut impl Rng) -> Self {
        for (p, t) in self.probes.iter_mut().zip(&self.inputs) {
            if t.numel() > per_input {
                let mut idx = sample(rng, t.numel(), per_input).into_vec();
                idx.sort_unstable();
                *p = idx;
            }
        }
        self
    }

    pub fn with_step(mut self, step: f64) -> Self {
        self.step = step;
        self
    }

    fn eval(&self, inputs: &[Tensor<f64>]) -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t)).collect();
        let out = (self.build)(&mut tape, &vars)?;
        Ok(tape.value(out)[0])
    }

    pub fn analytic(&self) -> Result<Vec<Vec<f64>>> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = self.inputs.iter().map(|t| tape.leaf(t)).collect();
        let out = (self.build)(&mut tape, &vars)?;
        let g = tape.backward(out)?;
        Ok(vars
            .iter()
            .zip(&self.inputs)
            .map(|(v, t)| g.get(*v).map_or_else(|| vec![0.0; t.numel()], <[f64]>::to_vec))
            .collect())
    }

    /// Central differences at the probed coordinates.
    pub fn numeric(&self) -> Result<Vec<Vec<f64>>> {
        let mut work = self.inputs.clone();
        let mut out = Vec::with_capacity(work.len());
        for (i, probes) in self.probes.iter().enumerate() {
            let mut g = Vec::with_capacity(probes.len());
            for &k in probes {
                let x0 = work[i].data()[k];
                work[i].data_mut()[k] = x0 + self.step;
                let plus = self.eval(&work)?;
                work[i].data_mut()[k] = x0 - self.step;
                let minus = self.eval(&work)?;
                work[i].data_mut()[k] = x0;
                g.push((plus - minus) / (2.0 * self.step));
            }
            out.push(g);
        }
        Ok(out)
    }

    /// Largest per-input relative error: over the probed coordinates of one
    /// input, `max |a - n|` divided by `max(|a|, |n|, 1e-6)`.
    pub fn max_rel_err(&self) -> Result<f64> {
        let an = self.analytic()?;
        let nu = self.numeric()?;
        let mut worst = 0.0f64;
        for ((a, n), probes) in an.iter().zip(&nu).zip(&self.probes) {
            let pairs = || probes.iter().zip(n).map(|(&k, &nk)| (a[k], nk));
            let diff = pairs().map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            let scale = pairs().map(|(x, y)| x.abs().max(y.abs())).fold(1e-6, f64::max);
            worst = worst.max(diff / scale);
        }
        Ok(worst)
    }
}

fn rand_tensor(rng: &mut impl Rng, shape: Vec<usize>, lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::param(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).expect("shape")
}

/// Reduces `y` to a scalar through a fixed non-uniform projection.
fn project(t: &mut Tape<f64>, y: Var) -> Result<Var> {
    let n = t.value(y).len();
    let shape = t.shape(y).to_vec();
    let w: Vec<f64> = (0..n).map(|i| 0.3 + 0.17 * ((i * 7 % 11) as f64)).collect();
    let c = t.constant(shape, w)?;
    let p = t.mul(y, c)?;
    t.sum(p, None)
}

macro_rules! op {
    ($name:expr, [$($shape:expr),+], $range:expr, |$t:ident, $v:ident| $body:expr) => {
        ($name, vec![$($shape.to_vec()),+], $range, Box::new(|$t: &mut Tape<f64>, $v: &[Var]| {
            let y = $body;
            project($t, y)
        }) as Build)
    };
}

/// One case per op kind and broadcast form, inputs drawn from `seed`.
pub fn op_cases(seed: u64) -> Vec<GradCase> {
    let table: Vec<(&str, Vec<Vec<usize>>, (f64, f64), Build)> = vec![
        op!("add", [[3, 4], [3, 4]], (-1.0, 1.0), |t, v| t.add(v[0], v[1])?),
        op!("add-row-broadcast", [[3, 4], [1, 4]], (-1.0, 1.0), |t, v| t.add(v[0], v[1])?),
        op!("sub", [[3, 4], [3, 4]], (-1.0, 1.0), |t, v| t.sub(v[0], v[1])?),
        op!("mul", [[3, 4], [3, 4]], (-1.0, 1.0), |t, v| t.mul(v[0], v[1])?),
        op!("mul-col-broadcast", [[3, 4], [3, 1]], (-1.0, 1.0), |t, v| t.mul(v[0], v[1])?),
        op!("mul-scalar-broadcast", [[3, 4], [1]], (-1.0, 1.0), |t, v| t.mul(v[0], v[1])?),
        op!("matmul", [[3, 4], [4, 2]], (-1.0, 1.0), |t, v| t.matmul(v[0], v[1])?),
        op!("relu", [[3, 4]], (-1.0, 1.0), |t, v| t.relu(v[0])),
        op!("tanh", [[3, 4]], (-2.0, 2.0), |t, v| t.tanh(v[0])),
        op!("sigmoid", [[3, 4]], (-3.0, 3.0), |t, v| t.sigmoid(v[0])),
        op!("log", [[3, 4]], (0.5, 2.0), |t, v| t.log(v[0])),
        op!("exp", [[3, 4]], (-1.0, 1.0), |t, v| t.exp(v[0])),
        op!("sum-axis0", [[3, 4]], (-1.0, 1.0), |t, v| t.sum(v[0], Some(0))?),
        op!("sum-axis1", [[3, 4]], (-1.0, 1.0), |t, v| t.sum(v[0], Some(1))?),
        op!("mean", [[3, 4]], (-1.0, 1.0), |t, v| t.mean(v[0], None)?),
        op!("mean-axis1", [[3, 4]], (-1.0, 1.0), |t, v| t.mean(v[0], Some(1))?),
        op!("concat0", [[2, 3], [1, 3]], (-1.0, 1.0), |t, v| t.concat(&[v[0], v[1]], 0)?),
        op!("concat1", [[2, 3], [2, 2]], (-1.0, 1.0), |t, v| t.concat(&[v[0], v[1]], 1)?),
        op!("slice0", [[4, 3]], (-1.0, 1.0), |t, v| t.slice(v[0], 0, 1, 2)?),
        op!("slice1", [[3, 5]], (-1.0, 1.0), |t, v| t.slice(v[0], 1, 2, 3)?),
        op!("softmax", [[3, 4]], (-2.0, 2.0), |t, v| t.softmax(v[0])?),
        op!("log_softmax", [[3, 4]], (-2.0, 2.0), |t, v| t.log_softmax(v[0])?),
        op!("scale", [[3, 4]], (-1.0, 1.0), |t, v| t.scale(v[0], -1.7)),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    table
        .into_iter()
        .map(|(name, shapes, (lo, hi), build)| {
            let inputs = shapes.into_iter().map(|s| rand_tensor(&mut rng, s, lo, hi)).collect();
            GradCase::new(name, inputs, build)
        })
        .collect()
}

const INPUT: usize = 6;
const ROWS: usize = 5;
const PROBES: usize = 16;

fn params_of<M: Module<f64>>(m: &M) -> Vec<Tensor<f64>> {
    m.params().into_iter().cloned().collect()
}

fn batch_x(rng: &mut impl Rng) -> Vec<f64> {
    (0..ROWS * INPUT).map(|_| rng.random_range(0.0..1.0)).collect()
}

/// Base learner with two heads of two classes, CE over a batch, gradient
/// into every parameter.
pub fn base_case(seed: u64, mode: HeadMode) -> GradCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = BaseLearner::new(BaseConfig::new(INPUT), mode, &mut rng);
    net.expand_head(2, &mut rng).expect("head");
    net.expand_head(2, &mut rng).expect("head");
    let x = batch_x(&mut rng);
    let tasks: Vec<usize> = (0..ROWS).map(|r| r % 2).collect();
    let labels: Vec<usize> = match mode {
        HeadMode::ClassIncremental => (0..ROWS).map(|r| (r * 3) % 4).collect(),
        HeadMode::TaskIncremental => (0..ROWS).map(|r| (r * 3) % 2).collect(),
    };
    let inputs = params_of(&net);
    let name = format!("base-{mode:?}");
    let build: Build = Box::new(move |t, v| {
        let xv = t.constant(vec![ROWS, INPUT], x.clone())?;
        let sel = match mode {
            HeadMode::ClassIncremental => HeadSelect::All,
            HeadMode::TaskIncremental => HeadSelect::PerRow(&tasks),
        };
        let (o, _) = net.forward_tape(t, v, xv, sel)?;
        let ce = ce_rows(t, o, &labels)?;
        t.mean(ce, None)
    });
    GradCase::new(name, inputs, build).subsample(PROBES, &mut rng).with_step(1e-6)
}

/// A single LSTM cell unrolled for `steps` steps. Inputs are the cell
/// weights, the input sequence, and the initial `h` and `c`.
pub fn lstm_case(seed: u64, steps: usize) -> GradCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = 4;
    let cell = LstmCell::<f64>::init(&mut rng, width);
    let mut inputs = vec![cell.w_input.clone(), cell.w_hidden.clone(), cell.bias.clone()];
    inputs.push(rand_tensor(&mut rng, vec![steps, width], -1.0, 1.0));
    inputs.push(rand_tensor(&mut rng, vec![1, HIDDEN], -0.5, 0.5));
    inputs.push(rand_tensor(&mut rng, vec![1, HIDDEN], -0.5, 0.5));
    let build: Build = Box::new(move |t, v| {
        let (mut h, mut c) = (v[4], v[5]);
        let mut outs = Vec::with_capacity(steps);
        for s in 0..steps {
            let x = t.slice(v[3], 0, s, 1)?;
            (h, c) = cell.step(t, &v[0..3], x, h, c)?;
            outs.push(h);
        }
        outs.push(c);
        let all = t.concat(&outs, 0)?;
        project(t, all)
    });
    GradCase::new(format!("lstm-{steps}-steps"), inputs, build).subsample(PROBES, &mut rng)
}

fn random_state(rng: &mut impl Rng, layers: usize) -> AssessorState<f64> {
    AssessorState {
        layers: (0..layers)
            .map(|_| LstmState {
                h: (0..HIDDEN).map(|_| rng.random_range(-0.5..0.5)).collect(),
                c: (0..HIDDEN).map(|_| rng.random_range(-0.5..0.5)).collect(),
            })
            .collect(),
    }
}

/// Full assessor over a `ROWS`-step sequence from a random state, gradient
/// into every parameter.
pub fn assessor_case(seed: u64, layers: usize) -> GradCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = Assessor::new(AssessorConfig { input: INPUT, layers }, &mut rng).expect("layers");
    let x = batch_x(&mut rng);
    let state = random_state(&mut rng, layers);
    let inputs = params_of(&net);
    let build: Build = Box::new(move |t, v| {
        let xv = t.constant(vec![ROWS, INPUT], x.clone())?;
        let (w, _) = net.forward_tape(t, v, xv, &state)?;
        project(t, w)
    });
    GradCase::new(format!("assessor-{layers}-layer"), inputs, build).subsample(PROBES, &mut rng).with_step(1e-6)
}

/// Shared layout for the combined-loss cases: two current rows, three
/// memory rows (one augmented), task index 3.
struct LossSetup {
    base: BaseLearner<f64>,
    x: Vec<f64>,
    labels: Vec<usize>,
    stored: Vec<f64>,
    scale: Vec<f64>,
}

const CURRENT: usize = 2;

fn loss_setup(rng: &mut ChaCha8Rng) -> LossSetup {
    let mut base = BaseLearner::new(BaseConfig::new(INPUT), HeadMode::ClassIncremental, rng);
    base.expand_head(4, rng).expect("head");
    base.expand_head(2, rng).expect("head");
    let mem = ROWS - CURRENT;
    LossSetup {
        base,
        x: batch_x(rng),
        labels: vec![4, 5, 0, 3, 1],
        stored: (0..mem * 4).map(|_| rng.random_range(-2.0..2.0)).collect(),
        scale: vec![1.0, 1.0, rng.random_range(0.1..1.0)],
    }
}

fn loss_of(t: &mut Tape<f64>, s: &LossSetup, base_vars: &[Var], weights: Var) -> Result<Var> {
    let xv = t.constant(vec![ROWS, INPUT], s.x.clone())?;
    let (o, _) = s.base.forward_tape(t, base_vars, xv, HeadSelect::All)?;
    let h = t.constant(vec![ROWS - CURRENT, 4], s.stored.clone())?;
    let batch = LossBatch {
        logits: o,
        labels: &s.labels,
        weights,
        current: CURRENT,
        stored: Some(h),
        memory_scale: &s.scale,
        task: 3,
    };
    combined_loss(t, &batch, &LossTerms::default())
}

/// Combined loss at task 3 with the base learner frozen, differentiated
/// into the assessor parameters through `alpha`, `beta` and `gamma`.
pub fn meta_loss_case(seed: u64) -> GradCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let setup = loss_setup(&mut rng);
    let assessor = Assessor::new(AssessorConfig::new(INPUT), &mut rng).expect("layers");
    let inputs = params_of(&assessor);
    let build: Build = Box::new(move |t, v| {
        let base_vars = setup.base.bind(t, false);
        let xv = t.constant(vec![ROWS, INPUT], setup.x.clone())?;
        let (w, _) = assessor.forward_tape(t, v, xv, &assessor.initial_state())?;
        loss_of(t, &setup, &base_vars, w)
    });
    GradCase::new("combined-loss-into-assessor", inputs, build).subsample(PROBES, &mut rng).with_step(1e-6)
}

/// Combined loss at task 3 with fixed random weights, differentiated into
/// the base learner.
pub fn base_loss_case(seed: u64) -> GradCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let setup = loss_setup(&mut rng);
    let w = MetaWeights::new(rng.random_range(0.1..0.9), rng.random_range(0.1..0.9), rng.random_range(0.1..0.9)).expect("in range");
    let inputs = params_of(&setup.base);
    let build: Build = Box::new(move |t, v| {
        let weights = constant_weights(t, ROWS, w)?;
        loss_of(t, &setup, v, weights)
    });
    GradCase::new("combined-loss-into-base", inputs, build).subsample(PROBES, &mut rng).with_step(1e-6)
}

/// Every network-level case for one seed.
pub fn network_cases(seed: u64) -> Vec<GradCase> {
    vec![
        base_case(seed, HeadMode::ClassIncremental),
        base_case(seed, HeadMode::TaskIncremental),
        lstm_case(seed, 5),
        assessor_case(seed, 1),
        assessor_case(seed, 2),
        meta_loss_case(seed),
        base_loss_case(seed),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rel_err_floors_tiny_gradients() {
        assert_eq!(rel_err(0.0, 0.0), 0.0);
        assert!((rel_err(1.0, 1.1) - 0.1 / 1.1).abs() < 1e-15);
        assert!((rel_err(1e-9, 0.0) - 1e-3).abs() < 1e-15);
    }

    #[test]
    fn subsample_keeps_small_inputs_whole() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let case = lstm_case(0, 2).subsample(8, &mut rng);
        assert!(case.probes.iter().zip(&case.inputs).all(|(p, t)| p.len() == t.numel().min(8)));
    }

    #[test]
    fn network_cases_pass_on_a_few_seeds() {
        for seed in 0..3 {
            for case in network_cases(seed) {
                let err = case.max_rel_err().unwrap();
                assert!(err < 1e-4, "{} seed {seed}: {err}", case.name);
            }
        }
    }

    #[test]
    fn a_wrong_gradient_is_caught() {
        // the value is x^3 but the tape only sees the x^2 path
        let x = Tensor::param(vec![1], vec![0.7]).unwrap();
        let case = GradCase::new("cube-vs-square", vec![x], Box::new(|t, v| {
            let sq = t.mul(v[0], v[0])?;
            let d = t.value(v[0])[0];
            let c = t.constant(vec![1], vec![d * d * d - d * d])?;
            t.add(sq, c)
        }));
        assert!(case.max_rel_err().unwrap() > 1e-2);
    }
}
