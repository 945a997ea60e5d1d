//! Compensated over-sampling: likelihood-ratio weights that shrink the
//! influence of augmented copies drifting away from their origin's feature
//! cluster.

mod experiment;
mod linalg;

pub use experiment::{mse_reduction_experiment, Augmentation, MseExperimentConfig, MseReport, MseRow};
pub use linalg::{cholesky, solve_spd};

use crate::error::{AglaError, Result};
use crate::ndmath::{Tape, Var};
use crate::scalar::Scalar;

/// Feature statistics of a set of augmented groups.
#[derive(Clone, Debug, PartialEq)]
pub struct CosStats<S> {
    /// Mean feature of each origin group, in input order.
    pub means: Vec<Vec<S>>,
    /// Pooled within-group covariance plus `ridge * I`, row-major `d x d`.
    pub covariance: Vec<S>,
    pub dim: usize,
    pub tau: S,
    pub ridge: S,
    /// Lower Cholesky factor of `covariance`.
    factor: Vec<S>,
}

/// `1e-6 * trace(sigma) / d`, floored at `1e-12` so an all-zero covariance
/// still factorises. In f32 the relative factor is raised to `1000 * eps`
/// (about 1.2e-4), since 1e-6 is below what its Cholesky can resolve.
pub fn auto_ridge<S: Scalar>(sigma: &[S], d: usize) -> S {
    let trace: S = (0..d).map(|i| sigma[i * d + i]).sum();
    let rel = S::of(1e-6).max(S::of(1000.0) * S::epsilon());
    (rel * trace / S::of_usize(d)).max(S::of(1e-12))
}

/// Pooled covariance `(1/NM) sum_i sum_k (z - mu_i)(z - mu_i)^T` without ridge.
fn pooled<S: Scalar>(groups: &[Vec<Vec<S>>]) -> Result<(Vec<Vec<S>>, Vec<S>, usize)> {
    let d = groups
        .iter()
        .flat_map(|g| g.first())
        .map(Vec::len)
        .next()
        .ok_or_else(|| AglaError::Parameter("no feature groups".into()))?;
    let mut means = Vec::with_capacity(groups.len());
    let mut sigma = vec![S::zero(); d * d];
    let mut count = 0usize;
    for (i, g) in groups.iter().enumerate() {
        if g.is_empty() {
            return Err(AglaError::Parameter(format!("origin group {i} is empty")));
        }
        if let Some(z) = g.iter().find(|z| z.len() != d) {
            return Err(AglaError::dim("compute_cos_stats", format!("feature width {} in group {i}, expected {d}", z.len())));
        }
        let m = S::of_usize(g.len());
        let mu: Vec<S> = (0..d).map(|j| g.iter().map(|z| z[j]).sum::<S>() / m).collect();
        for z in g {
            for a in 0..d {
                let da = z[a] - mu[a];
                if da == S::zero() {
                    continue;
                }
                for b in 0..d {
                    sigma[a * d + b] += da * (z[b] - mu[b]);
                }
            }
        }
        count += g.len();
        means.push(mu);
    }
    let n = S::of_usize(count);
    sigma.iter_mut().for_each(|v| *v /= n);
    Ok((means, sigma, d))
}

impl<S: Scalar> CosStats<S> {
    /// Group means and pooled covariance with an explicit ridge.
    pub fn compute(groups: &[Vec<Vec<S>>], tau: S, ridge: S) -> Result<Self> {
        if !(tau > S::zero()) {
            return Err(AglaError::Parameter(format!("temperature tau must be positive, got {tau}")));
        }
        if ridge < S::zero() {
            return Err(AglaError::Parameter(format!("ridge must be >= 0, got {ridge}")));
        }
        let (means, mut sigma, d) = pooled(groups)?;
        for i in 0..d {
            sigma[i * d + i] += ridge;
        }
        let factor = cholesky(&sigma, d).ok_or_else(|| {
            AglaError::LinearAlgebra("pooled covariance is singular; use a positive ridge".into())
        })?;
        Ok(CosStats { means, covariance: sigma, dim: d, tau, ridge, factor })
    }

    /// As [`compute`](Self::compute) with the ridge chosen by [`auto_ridge`].
    pub fn compute_auto(groups: &[Vec<Vec<S>>], tau: S) -> Result<Self> {
        let (_, sigma, d) = pooled(groups)?;
        Self::compute(groups, tau, auto_ridge(&sigma, d))
    }

    /// Weight of feature `z` against the mean of group `group`.
    pub fn weight(&self, group: usize, z: &[S]) -> Result<S> {
        let mu = self
            .means
            .get(group)
            .ok_or_else(|| AglaError::Parameter(format!("no group {group}")))?;
        if z.len() != self.dim {
            return Err(AglaError::dim("cos_weight", format!("feature width {} vs {}", z.len(), self.dim)));
        }
        Ok(weight_from_factor(&self.factor, self.dim, z, mu, self.tau))
    }
}

fn weight_from_factor<S: Scalar>(l: &[S], d: usize, z: &[S], mu: &[S], tau: S) -> S {
    let diff: Vec<S> = z.iter().zip(mu).map(|(&a, &b)| a - b).collect();
    let y = linalg::forward_substitute(l, d, &diff);
    let quad: S = y.iter().map(|&v| v * v).sum();
    (-quad / tau).exp()
}

/// Public form of the statistics step.
pub fn compute_cos_stats<S: Scalar>(groups: &[Vec<Vec<S>>], tau: S, ridge: S) -> Result<CosStats<S>> {
    CosStats::compute(groups, tau, ridge)
}

/// `exp(-(z - mu)^T (tau * sigma)^{-1} (z - mu))` for a row-major `d x d` `sigma`.
pub fn cos_weight<S: Scalar>(z: &[S], mu: &[S], sigma: &[S], tau: S) -> Result<S> {
    let d = z.len();
    if mu.len() != d || sigma.len() != d * d {
        return Err(AglaError::dim("cos_weight", format!("z {d}, mu {}, sigma {}", mu.len(), sigma.len())));
    }
    if !(tau > S::zero()) {
        return Err(AglaError::Parameter(format!("temperature tau must be positive, got {tau}")));
    }
    let l = cholesky(sigma, d).ok_or_else(|| {
        AglaError::LinearAlgebra("covariance is singular; add a ridge before computing weights".into())
    })?;
    Ok(weight_from_factor(&l, d, z, mu, tau))
}

/// `w / sum(w)` over one batch.
pub fn normalize_weights<S: Scalar>(weights: &[S]) -> Result<Vec<S>> {
    if weights.is_empty() {
        return Err(AglaError::Parameter("cannot normalise an empty batch".into()));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < S::zero()) {
        return Err(AglaError::Parameter("weights must be finite and non-negative".into()));
    }
    let total: S = weights.iter().copied().sum();
    if !(total > S::zero()) {
        return Err(AglaError::Parameter("weights sum to zero".into()));
    }
    Ok(weights.iter().map(|&w| w / total).collect())
}

/// `sum_i wbar_i * loss_i` with `wbar` entering the tape as a constant.
pub fn apply_cos_weights<S: Scalar>(tape: &mut Tape<S>, losses: Var, normalized: &[S]) -> Result<Var> {
    let n = tape.value(losses).len();
    if normalized.len() != n {
        return Err(AglaError::dim("apply_cos_weights", format!("{} weights for {n} losses", normalized.len())));
    }
    let w = tape.constant(tape.shape(losses).to_vec(), normalized.to_vec())?;
    let prod = tape.mul(losses, w)?;
    tape.sum(prod, None)
}
