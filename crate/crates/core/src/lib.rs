//! Assessor-guided continual learning on a small reverse-mode autodiff core.
//!
//! Everything numeric is generic over [`Scalar`] (f32 or f64). The aliases
//! below fix the scalar for the common cases.

pub mod continual;
pub mod cos;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod losses;
pub mod memory;
pub mod ndmath;
pub mod nets;
pub mod scalar;
pub mod transforms;

pub use error::{AglaError, Result};
pub use scalar::Scalar;

pub type Tensor = ndmath::Tensor<f64>;
pub type Tape = ndmath::Tape<f64>;
pub type BaseLearner = nets::BaseLearner<f64>;
pub type Assessor = nets::Assessor<f64>;
pub type MetaWeights = losses::MetaWeights<f64>;
pub type ReservoirBuffer = memory::ReservoirBuffer<f64>;
pub type MemoryEntry = memory::MemoryEntry<f64>;
pub type TaskStream = data::TaskStream<f64>;
pub type CosStats = cos::CosStats<f64>;
pub type ContinualLearner = continual::ContinualLearner<f64>;

pub type Tensor32 = ndmath::Tensor<f32>;
pub type Tape32 = ndmath::Tape<f32>;
pub type BaseLearner32 = nets::BaseLearner<f32>;
pub type Assessor32 = nets::Assessor<f32>;
pub type MetaWeights32 = losses::MetaWeights<f32>;
pub type ReservoirBuffer32 = memory::ReservoirBuffer<f32>;
pub type MemoryEntry32 = memory::MemoryEntry<f32>;
pub type TaskStream32 = data::TaskStream<f32>;
pub type CosStats32 = cos::CosStats<f32>;
pub type ContinualLearner32 = continual::ContinualLearner<f32>;
