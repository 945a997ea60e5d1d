use serde::{Deserialize, Serialize};

use crate::error::{AglaError, Result};
use crate::nets::HeadMode;
use crate::transforms::{TransformKind, TransformSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Agla,
    Finetune,
    Joint,
    ReplayDer,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Agla, Method::Finetune, Method::Joint, Method::ReplayDer];

    pub fn name(self) -> &'static str {
        match self {
            Method::Agla => "agla",
            Method::Finetune => "finetune",
            Method::Joint => "joint",
            Method::ReplayDer => "replay_der",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = AglaError;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| AglaError::Parameter(format!("unknown method {s:?}")))
    }
}

/// Components that can be switched off one at a time.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Toggles {
    pub assessor: bool,
    pub augment: bool,
    pub random_transform: bool,
    pub cos_weights: bool,
    pub der_loss: bool,
    pub distill_loss: bool,
}

impl Toggles {
    pub const ALL_ON: Toggles = Toggles {
        assessor: true,
        augment: true,
        random_transform: true,
        cos_weights: true,
        der_loss: true,
        distill_loss: true,
    };
}

/// The six single-component ablations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Ablation {
    /// Assessor replaced by the fixed weights.
    A,
    /// No memory augmentation.
    B,
    /// Validation set equals the training set.
    C,
    /// Uniform COS weights.
    D,
    /// No DER term.
    E,
    /// No distillation term.
    F,
}

impl Ablation {
    pub const ALL: [Ablation; 6] = [Ablation::A, Ablation::B, Ablation::C, Ablation::D, Ablation::E, Ablation::F];

    pub fn label(self) -> &'static str {
        match self {
            Ablation::A => "A",
            Ablation::B => "B",
            Ablation::C => "C",
            Ablation::D => "D",
            Ablation::E => "E",
            Ablation::F => "F",
        }
    }

    pub fn apply(self, cfg: &TrainConfig) -> TrainConfig {
        let mut c = cfg.clone();
        c.method = Method::Agla;
        match self {
            Ablation::A => c.assessor = false,
            Ablation::B => c.augment = false,
            Ablation::C => c.random_transform = false,
            Ablation::D => c.cos_weights = false,
            Ablation::E => c.der_loss = false,
            Ablation::F => c.distill_loss = false,
        }
        c
    }
}

/// Every knob of a run. Field names double as the flat JSON keys.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub method: Method,
    pub mode: HeadMode,
    pub epochs: usize,
    /// Base learner step size.
    pub lr: f64,
    /// Assessor step size.
    pub assessor_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub memory_per_class: usize,
    /// Upper bound on augmented class size as a multiple of what is stored.
    pub augment_ratio: usize,
    pub tau: f64,
    /// Covariance ridge; `None` picks [`auto_ridge`](crate::cos::auto_ridge).
    pub ridge: Option<f64>,
    pub temperature: f64,
    pub assessor_layers: usize,
    /// Reinitialise the assessor at every task boundary.
    pub reset_assessor: bool,
    pub assessor: bool,
    pub augment: bool,
    pub random_transform: bool,
    pub cos_weights: bool,
    pub der_loss: bool,
    pub distill_loss: bool,
    /// `(alpha, beta, gamma)` used whenever the assessor is off.
    pub fixed_weights: [f64; 3],
    pub transforms: TransformSet,
    pub seed: u64,
    /// Hash parameters around every update and fail if the wrong network moved.
    pub check_invariants: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            method: Method::Agla,
            mode: HeadMode::ClassIncremental,
            epochs: 20,
            lr: 0.05,
            assessor_lr: 1e-5,
            momentum: 0.9,
            weight_decay: 2e-4,
            batch_size: 100,
            memory_per_class: 50,
            augment_ratio: 10,
            tau: 1.0,
            ridge: None,
            temperature: 2.0,
            assessor_layers: 1,
            reset_assessor: false,
            assessor: true,
            augment: true,
            random_transform: true,
            cos_weights: true,
            der_loss: true,
            distill_loss: true,
            fixed_weights: [1.0, 0.5, 0.5],
            transforms: TransformSet::default(),
            seed: 0,
            check_invariants: false,
        }
    }
}

impl TrainConfig {
    pub fn for_method(method: Method) -> Self {
        TrainConfig { method, ..Default::default() }
    }

    /// Settings for the default synthetic stream: 10 stored samples per
    /// class (5% of its 200 training samples per class) and no invert in the
    /// transform family, since `1 - x` maps a Gaussian class onto its mirror
    /// image through the stream mean.
    pub fn reference(method: Method) -> Self {
        TrainConfig {
            method,
            memory_per_class: 10,
            transforms: TransformSet {
                kinds: vec![
                    TransformKind::GaussianNoise { sigma: 0.1 },
                    TransformKind::ChannelRand { low: 0.8, high: 1.2 },
                ],
            },
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(AglaError::Parameter("epochs must be >= 1".into()));
        }
        if !(self.lr > 0.0) || !(self.assessor_lr > 0.0) {
            return Err(AglaError::Parameter("learning rates must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(AglaError::Parameter("batch size must be >= 1".into()));
        }
        if !(self.tau > 0.0) || !(self.temperature > 0.0) {
            return Err(AglaError::Parameter("tau and temperature must be positive".into()));
        }
        if self.ridge.is_some_and(|r| !(r >= 0.0)) {
            return Err(AglaError::Parameter("ridge must be >= 0".into()));
        }
        if !(1..=2).contains(&self.assessor_layers) {
            return Err(AglaError::Parameter("assessor_layers must be 1 or 2".into()));
        }
        if self.fixed_weights.iter().any(|w| !(0.0..=1.0).contains(w)) {
            return Err(AglaError::Parameter("fixed weights must lie in [0, 1]".into()));
        }
        self.transforms.validate()
    }

    /// Toggles after the method's overrides: finetune and replay turn off
    /// the assessor, augmentation, random transforms and COS; finetune also
    /// drops memory altogether.
    pub fn effective_toggles(&self) -> Toggles {
        let own = Toggles {
            assessor: self.assessor,
            augment: self.augment,
            random_transform: self.random_transform,
            cos_weights: self.cos_weights,
            der_loss: self.der_loss,
            distill_loss: self.distill_loss,
        };
        match self.method {
            Method::Agla => own,
            Method::ReplayDer => Toggles { assessor: false, augment: false, random_transform: false, cos_weights: false, ..own },
            Method::Finetune | Method::Joint => Toggles {
                assessor: false,
                augment: false,
                random_transform: self.random_transform,
                cos_weights: false,
                der_loss: false,
                distill_loss: false,
            },
        }
    }

    pub fn effective_memory(&self) -> usize {
        match self.method {
            Method::Finetune | Method::Joint => 0,
            _ => self.memory_per_class,
        }
    }
}
