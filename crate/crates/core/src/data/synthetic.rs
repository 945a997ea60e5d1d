use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{AglaError, Result};
use crate::scalar::Scalar;

use super::TaskStream;

/// Gaussian-blob classes split into disjoint-class tasks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub tasks: usize,
    pub classes_per_task: usize,
    pub input_dim: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    /// Norm of every class mean (means are random directions).
    pub separation: f64,
    /// Isotropic standard deviation around each mean.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            tasks: 5,
            classes_per_task: 2,
            input_dim: 20,
            train_per_class: 200,
            test_per_class: 100,
            separation: 3.0,
            noise: 1.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.tasks == 0 || self.classes_per_task == 0 || self.input_dim == 0 || self.train_per_class == 0 {
            return Err(AglaError::Parameter("synthetic stream needs tasks, classes, dimension and samples > 0".into()));
        }
        if !(self.separation > 0.0) || !(self.noise >= 0.0) {
            return Err(AglaError::Parameter("separation must be > 0 and noise >= 0".into()));
        }
        Ok(())
    }
}

/// Half-width, in global standard deviations, of the window mapped onto
/// `[0, 1]`.
const WINDOW: f64 = 2.5;

/// Draws the stream, then maps every feature through one global affine map
/// taking `mean +- 2.5 std` onto `[0, 1]`, clipping the tails, so the inputs
/// look like pixel intensities and image-style transforms apply.
pub fn generate_synthetic_stream<S: Scalar>(spec: &SyntheticSpec) -> Result<TaskStream<S>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n_classes = spec.tasks * spec.classes_per_task;
    let d = spec.input_dim;
    let mut means: Vec<Vec<f64>> = Vec::with_capacity(n_classes);
    while means.len() < n_classes {
        let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm < 1e-9 {
            continue;
        }
        let m: Vec<f64> = v.iter().map(|a| a / norm * spec.separation).collect();
        if means.iter().any(|o| o == &m) {
            continue;
        }
        means.push(m);
    }
    let draw = |c: usize, n: usize, rng: &mut ChaCha8Rng| -> Vec<(Vec<f64>, i64)> {
        (0..n)
            .map(|_| {
                let x = means[c]
                    .iter()
                    .map(|&m| m + spec.noise * { let z: f64 = StandardNormal.sample(rng); z })
                    .collect::<Vec<f64>>();
                (x, c as i64)
            })
            .collect()
    };
    let mut raw = Vec::with_capacity(spec.tasks);
    for k in 0..spec.tasks {
        let mut train = Vec::new();
        let mut test = Vec::new();
        for j in 0..spec.classes_per_task {
            let c = k * spec.classes_per_task + j;
            train.extend(draw(c, spec.train_per_class, &mut rng));
            test.extend(draw(c, spec.test_per_class, &mut rng));
        }
        raw.push((train, test));
    }
    let values = || raw.iter().flat_map(|(a, b)| a.iter().chain(b)).flat_map(|(x, _)| x.iter().copied());
    let count = values().count() as f64;
    let mean = values().sum::<f64>() / count;
    let std = (values().map(|v| (v - mean).powi(2)).sum::<f64>() / count).sqrt();
    let width = if std > 0.0 { 2.0 * WINDOW * std } else { 1.0 };
    let scale = |set: Vec<(Vec<f64>, i64)>| -> Vec<(Vec<S>, i64)> {
        set.into_iter()
            .map(|(x, l)| (x.into_iter().map(|v| S::of((0.5 + (v - mean) / width).clamp(0.0, 1.0))).collect(), l))
            .collect()
    };
    TaskStream::from_labelled(raw.into_iter().map(|(a, b)| (scale(a), scale(b))).collect())
}
