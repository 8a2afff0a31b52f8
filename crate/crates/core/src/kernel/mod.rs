//! Differentiable primitives, a reverse-mode tape and the finite-difference
//! oracle that certifies it.

pub mod gradcheck;
pub mod ops;
pub mod tape;
pub mod tensor;

pub use gradcheck::{finite_diff_grad, max_relative_error, relative_error, ParamSet, DEFAULT_STEP};
pub use tape::{Backward, ParamGrad, ParamGrads, ParamKey, Tape, Var};
pub use tensor::Tensor;
