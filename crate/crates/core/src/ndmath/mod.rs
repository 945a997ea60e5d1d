//! Dense tensors, a define-by-run reverse-mode tape, and SGD.

pub mod kernels;
mod sgd;
mod tape;
mod tensor;

pub use sgd::{sgd_step, SgdState};
pub use tape::{Gradients, OpKind, Tape, Var};
pub use tensor::Tensor;
