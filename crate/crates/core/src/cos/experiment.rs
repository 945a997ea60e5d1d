//! Monte-Carlo check that likelihood-ratio weighting of augmented copies
//! lowers parameter error of a least-squares fit.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::{linalg::solve_spd, normalize_weights, CosStats};
use crate::error::{AglaError, Result};
use crate::scalar::Scalar;

/// How each augmented copy is produced from its clean origin.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Augmentation {
    /// Exact copies.
    Identity,
    /// `x + sigma * N(0, I)`.
    Jitter { sigma: f64 },
    /// Jitter, except that with probability `outlier_prob` the copy is pushed
    /// by `outlier_scale * N(0, I)` instead (contaminated, heavy-tailed).
    Outliers { sigma: f64, outlier_prob: f64, outlier_scale: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MseExperimentConfig {
    pub theta: Vec<f64>,
    pub clean: usize,
    pub copies: usize,
    pub label_noise: f64,
    pub augmentation: Augmentation,
    pub tau: f64,
    pub seeds: usize,
    pub seed: u64,
}

impl Default for MseExperimentConfig {
    fn default() -> Self {
        MseExperimentConfig {
            theta: vec![1.0, -2.0, 0.5, 3.0, -1.0],
            clean: 20,
            copies: 5,
            label_noise: 0.5,
            augmentation: Augmentation::Outliers { sigma: 0.1, outlier_prob: 0.2, outlier_scale: 3.0 },
            tau: 1.0,
            seeds: 500,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MseRow {
    pub seed: u64,
    pub mse_unweighted: f64,
    pub mse_weighted: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MseReport {
    pub rows: Vec<MseRow>,
    /// Mean error of the fit on clean samples alone.
    pub mse_clean: f64,
    pub mean_unweighted: f64,
    pub mean_weighted: f64,
    /// Paired t statistic of `unweighted - weighted`.
    pub t_statistic: f64,
    /// One-sided p-value for `mean_weighted < mean_unweighted`.
    pub p_value: f64,
}

impl MseReport {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(row).map_err(csv_io)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

fn csv_io(e: csv::Error) -> AglaError {
    AglaError::Io(std::io::Error::other(e))
}

impl MseExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seeds < 2 {
            return Err(AglaError::Parameter(format!("need at least 2 seeds, got {}", self.seeds)));
        }
        if self.theta.is_empty() || self.copies == 0 || self.clean <= self.theta.len() {
            return Err(AglaError::Parameter("need a non-empty theta, copies >= 1 and clean > dim".into()));
        }
        if !(self.tau > 0.0) || self.label_noise < 0.0 {
            return Err(AglaError::Parameter("tau must be positive and label noise non-negative".into()));
        }
        match self.augmentation {
            Augmentation::Identity => {}
            Augmentation::Jitter { sigma } if sigma >= 0.0 => {}
            Augmentation::Outliers { sigma, outlier_prob, outlier_scale }
                if sigma >= 0.0 && (0.0..=1.0).contains(&outlier_prob) && outlier_scale >= 0.0 => {}
            a => return Err(AglaError::Parameter(format!("invalid augmentation {a:?}"))),
        }
        Ok(())
    }
}

fn normal_vec(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> Vec<f64> {
    (0..d)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            scale * z
        })
        .collect()
}

/// Weighted least squares `argmin sum_r c_r (y_r - x_r . theta)^2`.
fn fit<S: Scalar>(xs: &[Vec<S>], ys: &[S], c: &[S]) -> Result<Vec<S>> {
    let d = xs[0].len();
    let mut a = vec![S::zero(); d * d];
    let mut b = vec![S::zero(); d];
    for ((x, &y), &w) in xs.iter().zip(ys).zip(c) {
        for i in 0..d {
            b[i] += w * x[i] * y;
            for j in 0..d {
                a[i * d + j] += w * x[i] * x[j];
            }
        }
    }
    solve_spd(&a, d, &b).ok_or_else(|| AglaError::LinearAlgebra("normal equations are singular".into()))
}

fn sq_error<S: Scalar>(theta: &[S], truth: &[f64]) -> f64 {
    theta.iter().zip(truth).map(|(t, t0)| (t.as_f64() - t0).powi(2)).sum()
}

struct Trial {
    clean: f64,
    unweighted: f64,
    weighted: f64,
}

fn trial<S: Scalar>(cfg: &MseExperimentConfig, seed: u64) -> Result<Trial> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = cfg.theta.len();
    let n = cfg.clean;
    let m = cfg.copies;

    let mut xs: Vec<Vec<S>> = Vec::with_capacity(n * (m + 1));
    let mut ys: Vec<S> = Vec::with_capacity(n * (m + 1));
    for _ in 0..n {
        let x = normal_vec(&mut rng, d, 1.0);
        let noise: f64 = StandardNormal.sample(&mut rng);
        let y: f64 = x.iter().zip(&cfg.theta).map(|(a, b)| a * b).sum::<f64>() + cfg.label_noise * noise;
        xs.push(x.into_iter().map(S::of).collect());
        ys.push(S::of(y));
    }
    let mut groups: Vec<Vec<Vec<S>>> = Vec::with_capacity(n);
    for origin in &xs {
        let mut g = Vec::with_capacity(m);
        for _ in 0..m {
            let delta = match cfg.augmentation {
                Augmentation::Identity => vec![0.0; d],
                Augmentation::Jitter { sigma } => normal_vec(&mut rng, d, sigma),
                Augmentation::Outliers { sigma, outlier_prob, outlier_scale } => {
                    if rng.random::<f64>() < outlier_prob {
                        normal_vec(&mut rng, d, outlier_scale)
                    } else {
                        normal_vec(&mut rng, d, sigma)
                    }
                }
            };
            g.push(origin.iter().zip(&delta).map(|(&a, &b)| a + S::of(b)).collect::<Vec<S>>());
        }
        groups.push(g);
    }

    let clean_theta = fit(&xs[..n], &ys[..n], &vec![S::one(); n])?;

    let stats = CosStats::compute_auto(&groups, S::of(cfg.tau))?;
    let mut raw = Vec::with_capacity(n * m);
    for (i, g) in groups.iter().enumerate() {
        for z in g {
            raw.push(stats.weight(i, z)?);
        }
    }
    let wbar = normalize_weights(&raw)?;
    let uniform = vec![S::one() / S::of_usize(n * m); n * m];

    let clean_c = S::one() / S::of_usize(n);
    let mut all_x = xs.clone();
    let mut all_y = ys.clone();
    for (i, g) in groups.into_iter().enumerate() {
        for z in g {
            all_x.push(z);
            all_y.push(ys[i]);
        }
    }
    let with = |aug: &[S]| -> Vec<S> { std::iter::repeat_n(clean_c, n).chain(aug.iter().copied()).collect() };
    let unweighted = fit(&all_x, &all_y, &with(&uniform))?;
    let weighted = fit(&all_x, &all_y, &with(&wbar))?;
    Ok(Trial {
        clean: sq_error(&clean_theta, &cfg.theta),
        unweighted: sq_error(&unweighted, &cfg.theta),
        weighted: sq_error(&weighted, &cfg.theta),
    })
}

/// Runs `cfg.seeds` independent regressions and compares uniform against
/// likelihood-ratio weighting of the augmented copies.
pub fn mse_reduction_experiment<S: Scalar>(cfg: &MseExperimentConfig) -> Result<MseReport> {
    cfg.validate()?;
    let mut rows = Vec::with_capacity(cfg.seeds);
    let mut clean = 0.0;
    for r in 0..cfg.seeds as u64 {
        let seed = cfg.seed.wrapping_add(r);
        let t = trial::<S>(cfg, seed)?;
        clean += t.clean;
        rows.push(MseRow { seed, mse_unweighted: t.unweighted, mse_weighted: t.weighted });
    }
    let n = rows.len() as f64;
    let mean_unweighted = rows.iter().map(|r| r.mse_unweighted).sum::<f64>() / n;
    let mean_weighted = rows.iter().map(|r| r.mse_weighted).sum::<f64>() / n;
    let diffs: Vec<f64> = rows.iter().map(|r| r.mse_unweighted - r.mse_weighted).collect();
    let mean_diff = diffs.iter().sum::<f64>() / n;
    let var = diffs.iter().map(|d| (d - mean_diff).powi(2)).sum::<f64>() / (n - 1.0);
    let (t_statistic, p_value) = if var > 0.0 {
        let t = mean_diff / (var / n).sqrt();
        let dist = StudentsT::new(0.0, 1.0, n - 1.0).map_err(|e| AglaError::Numeric(e.to_string()))?;
        (t, 1.0 - dist.cdf(t))
    } else if mean_diff > 0.0 {
        (f64::INFINITY, 0.0)
    } else {
        (0.0, 1.0)
    };
    Ok(MseReport {
        rows,
        mse_clean: clean / n,
        mean_unweighted,
        mean_weighted,
        t_statistic,
        p_value,
    })
}
