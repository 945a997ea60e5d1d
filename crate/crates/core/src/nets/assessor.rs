use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{AglaError, Result};
use crate::ndmath::{Tape, Tensor, Var};
use crate::scalar::Scalar;

use super::{uniform_fan_in, zero_all, Dense, Module};

/// Width of every assessor layer, including LSTM hidden and cell state.
pub const HIDDEN: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssessorConfig {
    pub input: usize,
    /// Stacked LSTM layers (1 or 2).
    pub layers: usize,
}

impl AssessorConfig {
    pub fn new(input: usize) -> Self {
        AssessorConfig { input, layers: 1 }
    }
}

/// One LSTM cell. Gate columns are laid out `[input | forget | candidate | output]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmCell<S> {
    pub w_input: Tensor<S>,
    pub w_hidden: Tensor<S>,
    pub bias: Tensor<S>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmState<S> {
    pub h: Vec<S>,
    pub c: Vec<S>,
}

impl<S: Scalar> LstmState<S> {
    pub fn zeros() -> Self {
        LstmState {
            h: vec![S::zero(); HIDDEN],
            c: vec![S::zero(); HIDDEN],
        }
    }

    fn check(&self) -> Result<()> {
        if self.h.len() != HIDDEN || self.c.len() != HIDDEN {
            return Err(AglaError::dim("assessor_forward", format!("state widths {}/{}, need {HIDDEN}", self.h.len(), self.c.len())));
        }
        if self.h.iter().chain(&self.c).any(|v| !v.is_finite()) {
            return Err(AglaError::Numeric("non-finite LSTM state".into()));
        }
        Ok(())
    }
}

impl<S: Scalar> LstmCell<S> {
    /// Uniform fan-in init with the forget-gate bias shifted to +1.
    pub fn init<R: Rng + ?Sized>(rng: &mut R, input: usize) -> Self {
        let g = 4 * HIDDEN;
        let w_input = uniform_fan_in(rng, input, input * g);
        let w_hidden = uniform_fan_in(rng, HIDDEN, HIDDEN * g);
        let mut bias: Vec<S> = uniform_fan_in(rng, HIDDEN, g);
        for b in &mut bias[HIDDEN..2 * HIDDEN] {
            *b += S::one();
        }
        LstmCell {
            w_input: Tensor::param(vec![input, g], w_input).expect("shape"),
            w_hidden: Tensor::param(vec![HIDDEN, g], w_hidden).expect("shape"),
            bias: Tensor::param(vec![1, g], bias).expect("shape"),
        }
    }

    /// One step on the tape; `vars` are `[w_input, w_hidden, bias]`.
    pub fn step(&self, tape: &mut Tape<S>, vars: &[Var], x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let a = tape.matmul(x, vars[0])?;
        let a = tape.add(a, vars[2])?;
        self.recur(tape, vars, a, h, c)
    }

    /// Step given the precomputed input projection `a = x W_input + bias`.
    fn recur(&self, tape: &mut Tape<S>, vars: &[Var], a: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let b = tape.matmul(h, vars[1])?;
        let z = tape.add(a, b)?;
        let i = tape.slice(z, 1, 0, HIDDEN)?;
        let f = tape.slice(z, 1, HIDDEN, HIDDEN)?;
        let g = tape.slice(z, 1, 2 * HIDDEN, HIDDEN)?;
        let o = tape.slice(z, 1, 3 * HIDDEN, HIDDEN)?;
        let i = tape.sigmoid(i);
        let f = tape.sigmoid(f);
        let g = tape.tanh(g);
        let o = tape.sigmoid(o);
        let fc = tape.mul(f, c)?;
        let ig = tape.mul(i, g)?;
        let c_next = tape.add(fc, ig)?;
        let tc = tape.tanh(c_next);
        let h_next = tape.mul(o, tc)?;
        Ok((h_next, c_next))
    }

    /// Runs a whole `[rows, input]` sequence, projecting all inputs in one
    /// product. Returns the `[rows, HIDDEN]` outputs and the final `(h, c)`.
    fn sequence(&self, tape: &mut Tape<S>, vars: &[Var], xs: Var, h: Var, c: Var) -> Result<(Var, Var, Var)> {
        let rows = tape.shape(xs)[0];
        let proj = tape.matmul(xs, vars[0])?;
        let proj = tape.add(proj, vars[2])?;
        let (mut h, mut c) = (h, c);
        let mut outputs = Vec::with_capacity(rows);
        for t in 0..rows {
            let a = tape.slice(proj, 0, t, 1)?;
            (h, c) = self.recur(tape, vars, a, h, c)?;
            outputs.push(h);
        }
        Ok((tape.concat(&outputs, 0)?, h, c))
    }
}

/// Recurrent state threaded through a sequence of assessed samples.
#[derive(Clone, Debug, PartialEq)]
pub struct AssessorState<S> {
    pub layers: Vec<LstmState<S>>,
}

impl<S: Scalar> AssessorState<S> {
    pub fn zeros(layers: usize) -> Self {
        AssessorState {
            layers: (0..layers).map(|_| LstmState::zeros()).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.h.iter().chain(&l.c).all(|v| v.is_finite()))
    }
}

/// Sequence-aware weight generator: dense extractor, LSTM, dense + sigmoid
/// to three outputs `(alpha, beta, gamma)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Assessor<S> {
    config: AssessorConfig,
    extractor: Dense<S>,
    cells: Vec<LstmCell<S>>,
    out: Dense<S>,
}

impl<S: Scalar> Assessor<S> {
    pub fn new<R: Rng + ?Sized>(config: AssessorConfig, rng: &mut R) -> Result<Self> {
        if !(1..=2).contains(&config.layers) {
            return Err(AglaError::Parameter(format!("assessor supports 1 or 2 LSTM layers, got {}", config.layers)));
        }
        Ok(Assessor {
            config,
            extractor: Dense::init(rng, config.input, HIDDEN),
            cells: (0..config.layers).map(|_| LstmCell::init(rng, HIDDEN)).collect(),
            out: Dense::init(rng, HIDDEN, 3),
        })
    }

    pub fn config(&self) -> AssessorConfig {
        self.config
    }

    pub fn initial_state(&self) -> AssessorState<S> {
        AssessorState::zeros(self.cells.len())
    }

    pub fn set_zero(&mut self) {
        zero_all(self.params_mut());
    }

    /// Runs the rows of `x` (`[rows, input]`) as one sequence starting from
    /// `state`. Returns the `[rows, 3]` weight matrix and the final state.
    pub fn forward_tape(
        &self,
        tape: &mut Tape<S>,
        vars: &[Var],
        x: Var,
        state: &AssessorState<S>,
    ) -> Result<(Var, AssessorState<S>)> {
        let xs = tape.shape(x).to_vec();
        if *xs.last().unwrap_or(&0) != self.config.input {
            return Err(AglaError::dim("assessor_forward", format!("input {xs:?}, assessor expects width {}", self.config.input)));
        }
        if state.layers.len() != self.cells.len() {
            return Err(AglaError::dim("assessor_forward", "state layer count"));
        }
        state.layers.iter().try_for_each(LstmState::check)?;
        let rows = if xs.len() == 1 { 1 } else { xs[0] };
        let feat = self.extractor.forward(tape, &vars[0..2], x)?;
        let feat = tape.relu(feat);
        let mut seq = feat;
        let mut hc = Vec::with_capacity(self.cells.len());
        for (l, cell) in self.cells.iter().enumerate() {
            let h0 = tape.constant(vec![1, HIDDEN], state.layers[l].h.clone())?;
            let c0 = tape.constant(vec![1, HIDDEN], state.layers[l].c.clone())?;
            let (out, h, c) = cell.sequence(tape, &vars[2 + 3 * l..5 + 3 * l], seq, h0, c0)?;
            hc.push((h, c));
            seq = out;
        }
        let hs = seq;
        debug_assert_eq!(tape.shape(hs)[0], rows);
        let k = 2 + 3 * self.cells.len();
        let z = self.out.forward(tape, &vars[k..k + 2], hs)?;
        let w = tape.sigmoid(z);
        let next = AssessorState {
            layers: hc
                .iter()
                .map(|(h, c)| LstmState {
                    h: tape.value(*h).to_vec(),
                    c: tape.value(*c).to_vec(),
                })
                .collect(),
        };
        Ok((w, next))
    }

    /// Weights for one sample, advancing `state` by one step.
    pub fn assess(&self, x: &[S], state: &AssessorState<S>) -> Result<([S; 3], AssessorState<S>)> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let xv = tape.constant(vec![1, x.len()], x.to_vec())?;
        let (w, next) = self.forward_tape(&mut tape, &vars, xv, state)?;
        let v = tape.value(w);
        Ok(([v[0], v[1], v[2]], next))
    }

    /// Weights for every row of `x`, as one sequence from a fresh state.
    pub fn assess_batch(&self, x: &Tensor<S>) -> Result<Vec<[S; 3]>> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let xv = tape.leaf(&x.detached());
        let (w, _) = self.forward_tape(&mut tape, &vars, xv, &self.initial_state())?;
        Ok(tape.value(w).chunks(3).map(|r| [r[0], r[1], r[2]]).collect())
    }
}

impl<S: Scalar> Module<S> for Assessor<S> {
    fn params(&self) -> Vec<&Tensor<S>> {
        let mut v = vec![&self.extractor.weight, &self.extractor.bias];
        for c in &self.cells {
            v.extend([&c.w_input, &c.w_hidden, &c.bias]);
        }
        v.extend([&self.out.weight, &self.out.bias]);
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<S>> {
        let mut v = vec![&mut self.extractor.weight, &mut self.extractor.bias];
        for c in &mut self.cells {
            v.extend([&mut c.w_input, &mut c.w_hidden, &mut c.bias]);
        }
        v.extend([&mut self.out.weight, &mut self.out.bias]);
        v
    }

    fn param_names(&self) -> Vec<String> {
        let mut v = vec!["extractor.weight".to_string(), "extractor.bias".to_string()];
        for l in 0..self.cells.len() {
            v.push(format!("lstm{l}.w_input"));
            v.push(format!("lstm{l}.w_hidden"));
            v.push(format!("lstm{l}.bias"));
        }
        v.push("out.weight".into());
        v.push("out.bias".into());
        v
    }
}
