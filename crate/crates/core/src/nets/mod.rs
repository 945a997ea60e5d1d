//! Base learner, assessor, and the parameter plumbing they share.

mod assessor;
mod base;
mod persist;

pub use assessor::{Assessor, AssessorConfig, AssessorState, LstmCell, LstmState, HIDDEN};
pub use base::{BaseConfig, BaseLearner, HeadMode, HeadSelect, ModelSnapshot};
pub use persist::{load_params, save_params, MAGIC, VERSION};

use rand::Rng;

use crate::error::{AglaError, Result};
use crate::ndmath::{Gradients, Tape, Tensor, Var};
use crate::scalar::Scalar;

/// Anything that owns an ordered list of trainable tensors.
pub trait Module<S: Scalar> {
    fn params(&self) -> Vec<&Tensor<S>>;
    fn params_mut(&mut self) -> Vec<&mut Tensor<S>>;
    fn param_names(&self) -> Vec<String>;

    /// Puts every parameter on `tape`. With `trainable == false` the copies
    /// are constants and no gradient can reach this module.
    fn bind(&self, tape: &mut Tape<S>, trainable: bool) -> Vec<Var> {
        self.params()
            .into_iter()
            .map(|p| {
                if trainable {
                    tape.leaf(p)
                } else {
                    tape.leaf(&p.detached())
                }
            })
            .collect()
    }

    fn accumulate_grads(&mut self, grads: &Gradients<S>, vars: &[Var]) -> Result<()> {
        let params = self.params_mut();
        if params.len() != vars.len() {
            return Err(AglaError::Contract(format!(
                "{} bound vars for {} parameters",
                vars.len(),
                params.len()
            )));
        }
        for (p, v) in params.into_iter().zip(vars) {
            grads.accumulate_into(*v, p)?;
        }
        Ok(())
    }

    fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Tensor::zero_grad);
    }

    fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.numel()).sum()
    }

    fn named_params(&self) -> Vec<(String, &Tensor<S>)> {
        self.param_names().into_iter().zip(self.params()).collect()
    }

    /// Overwrites parameter values from `(name, tensor)` pairs. Names and
    /// shapes must match this module's layout exactly.
    fn load_named(&mut self, named: &[(String, Tensor<S>)]) -> Result<()> {
        let names = self.param_names();
        if names.len() != named.len() {
            return Err(AglaError::Contract(format!(
                "expected {} tensors, file has {}",
                names.len(),
                named.len()
            )));
        }
        for ((want, p), (got, t)) in names.iter().zip(self.params_mut()).zip(named) {
            if want != got || p.shape() != t.shape() {
                return Err(AglaError::Contract(format!(
                    "tensor {got} {:?} does not fit slot {want} {:?}",
                    t.shape(),
                    p.shape()
                )));
            }
            p.data_mut().copy_from_slice(t.data());
        }
        Ok(())
    }

    fn is_finite(&self) -> bool {
        self.params().iter().all(|p| p.is_finite())
    }
}

/// Fully connected layer `x W + b` with `W: [in, out]`, `b: [1, out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense<S> {
    pub weight: Tensor<S>,
    pub bias: Tensor<S>,
}

pub(crate) fn uniform_fan_in<S: Scalar, R: Rng + ?Sized>(rng: &mut R, fan_in: usize, n: usize) -> Vec<S> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    (0..n).map(|_| S::of(rng.random_range(-bound..bound))).collect()
}

impl<S: Scalar> Dense<S> {
    /// Uniform(-1/sqrt(in), 1/sqrt(in)) for weights and biases.
    pub fn init<R: Rng + ?Sized>(rng: &mut R, input: usize, output: usize) -> Self {
        let w = uniform_fan_in(rng, input, input * output);
        let b = uniform_fan_in(rng, input, output);
        Dense {
            weight: Tensor::param(vec![input, output], w).expect("shape matches"),
            bias: Tensor::param(vec![1, output], b).expect("shape matches"),
        }
    }

    pub fn input(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn output(&self) -> usize {
        self.weight.shape()[1]
    }

    /// `vars` are `[weight, bias]` as returned by binding.
    pub fn forward(&self, tape: &mut Tape<S>, vars: &[Var], x: Var) -> Result<Var> {
        let h = tape.matmul(x, vars[0])?;
        tape.add(h, vars[1])
    }

    /// Tape-free evaluation on a row-major `[rows, in]` batch.
    pub fn eval(&self, x: &[S], rows: usize, relu: bool) -> Vec<S> {
        crate::ndmath::kernels::affine(x, rows, self.weight.data(), self.bias.data(), relu)
    }
}

pub(crate) fn zero_all<S: Scalar>(params: Vec<&mut Tensor<S>>) {
    for p in params {
        p.data_mut().iter_mut().for_each(|v| *v = S::zero());
    }
}
