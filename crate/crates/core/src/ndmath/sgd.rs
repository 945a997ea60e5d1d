use crate::error::{AglaError, Result};
use crate::scalar::Scalar;

use super::Tensor;

/// SGD with heavy-ball momentum and L2 weight decay.
///
/// `v <- momentum * v + grad + weight_decay * param; param <- param - lr * v`
#[derive(Clone, Debug)]
pub struct SgdState<S> {
    pub lr: S,
    pub momentum: S,
    pub weight_decay: S,
    velocity: Vec<Vec<S>>,
}

impl<S: Scalar> SgdState<S> {
    pub fn new(lr: S, momentum: S, weight_decay: S) -> Result<Self> {
        if !(lr > S::zero()) {
            return Err(AglaError::Parameter(format!("learning rate must be positive, got {lr}")));
        }
        if momentum < S::zero() || momentum >= S::one() {
            return Err(AglaError::Parameter(format!("momentum must be in [0,1), got {momentum}")));
        }
        if weight_decay < S::zero() {
            return Err(AglaError::Parameter(format!("weight decay must be >= 0, got {weight_decay}")));
        }
        Ok(SgdState {
            lr,
            momentum,
            weight_decay,
            velocity: Vec::new(),
        })
    }

    pub fn velocity(&self) -> &[Vec<S>] {
        &self.velocity
    }

    /// Drops velocities, e.g. after the parameter set changes shape.
    pub fn reset(&mut self) {
        self.velocity.clear();
    }

    /// Applies one update to `params` in order. Gradients are left intact.
    pub fn step(&mut self, params: &mut [&mut Tensor<S>]) -> Result<()> {
        if params.iter().any(|p| p.grad().is_none()) {
            return Err(AglaError::Contract("sgd_step on a parameter without a gradient".into()));
        }
        let stale = self.velocity.len() != params.len()
            || self.velocity.iter().zip(params.iter()).any(|(v, p)| v.len() != p.numel());
        if stale {
            // New or resized parameters restart from zero velocity.
            let old = std::mem::take(&mut self.velocity);
            self.velocity = params
                .iter()
                .enumerate()
                .map(|(i, p)| match old.get(i) {
                    Some(v) if v.len() == p.numel() => v.clone(),
                    _ => vec![S::zero(); p.numel()],
                })
                .collect();
        }
        for (p, v) in params.iter_mut().zip(self.velocity.iter_mut()) {
            let grad = p.grad().expect("checked above").to_vec();
            let data = p.data_mut();
            for i in 0..data.len() {
                v[i] = self.momentum * v[i] + grad[i] + self.weight_decay * data[i];
                data[i] -= self.lr * v[i];
            }
        }
        Ok(())
    }
}

/// Free-function form of [`SgdState::step`].
pub fn sgd_step<S: Scalar>(params: &mut [&mut Tensor<S>], state: &mut SgdState<S>) -> Result<()> {
    state.step(params)
}
