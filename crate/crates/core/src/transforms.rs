//! Random input transformations used to build validation sets and to
//! over-sample memory.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::error::{AglaError, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformKind {
    /// `1 - x`; inputs must already lie in `[0, 1]`.
    Invert,
    /// `x + eps`, `eps ~ N(0, sigma^2 I)`.
    GaussianNoise { sigma: f64 },
    /// Features split into three contiguous channel groups, each scaled by
    /// its own `Uniform(low, high)` factor.
    ChannelRand { low: f64, high: f64 },
}

impl TransformKind {
    pub fn validate(&self) -> Result<()> {
        match *self {
            TransformKind::Invert => Ok(()),
            TransformKind::GaussianNoise { sigma } if sigma >= 0.0 => Ok(()),
            TransformKind::ChannelRand { low, high } if low > 0.0 && low <= high => Ok(()),
            other => Err(AglaError::Parameter(format!("invalid transform {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TransformSpec {
    pub kind: TransformKind,
    pub seed: u64,
}

/// The family the random transformation is drawn from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformSet {
    pub kinds: Vec<TransformKind>,
}

impl Default for TransformSet {
    /// Invert, Gaussian noise (sigma 0.1), channel rand (0.8, 1.2).
    fn default() -> Self {
        TransformSet {
            kinds: vec![
                TransformKind::Invert,
                TransformKind::GaussianNoise { sigma: 0.1 },
                TransformKind::ChannelRand { low: 0.8, high: 1.2 },
            ],
        }
    }
}

impl TransformSet {
    pub fn only(kind: TransformKind) -> Self {
        TransformSet { kinds: vec![kind] }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kinds.is_empty() {
            return Err(AglaError::Parameter("empty transformation family".into()));
        }
        self.kinds.iter().try_for_each(TransformKind::validate)
    }

    /// Picks a kind uniformly and a fresh seed for it.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> TransformSpec {
        let kind = self.kinds[rng.random_range(0..self.kinds.len())];
        TransformSpec { kind, seed: rng.random() }
    }
}

/// Contiguous `[start, end)` ranges of the three channel groups.
fn channel_groups(d: usize) -> [(usize, usize); 3] {
    let base = d / 3;
    let extra = d % 3;
    let mut out = [(0, 0); 3];
    let mut start = 0;
    for (g, slot) in out.iter_mut().enumerate() {
        let len = base + usize::from(g < extra);
        *slot = (start, start + len);
        start += len;
    }
    out
}

pub fn apply_transform<S: Scalar>(spec: &TransformSpec, x: &[S]) -> Result<Vec<S>> {
    spec.kind.validate()?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(AglaError::Domain("transform input is not finite".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    match spec.kind {
        TransformKind::Invert => {
            if x.iter().any(|&v| v < S::zero() || v > S::one()) {
                return Err(AglaError::Domain("invert needs inputs scaled to [0, 1]".into()));
            }
            Ok(x.iter().map(|&v| S::one() - v).collect())
        }
        TransformKind::GaussianNoise { sigma } => {
            if sigma == 0.0 {
                return Ok(x.to_vec());
            }
            let n = Normal::new(0.0, sigma).expect("sigma validated");
            Ok(x.iter().map(|&v| v + S::of(n.sample(&mut rng))).collect())
        }
        TransformKind::ChannelRand { low, high } => {
            let mut out = x.to_vec();
            for (a, b) in channel_groups(x.len()) {
                let f = if low == high { low } else { rng.random_range(low..high) };
                let f = S::of(f);
                out[a..b].iter_mut().for_each(|v| *v *= f);
            }
            Ok(out)
        }
    }
}

/// Same size and labels as `train`, each input passed through one randomly
/// drawn transformation.
pub fn make_validation_set<S: Scalar>(train: &[Sample<S>], family: &TransformSet, seed: u64) -> Result<Vec<Sample<S>>> {
    family.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    train
        .iter()
        .map(|s| {
            let spec = family.draw(&mut rng);
            Ok(Sample { x: apply_transform(&spec, &s.x)?, y: s.y })
        })
        .collect()
}
