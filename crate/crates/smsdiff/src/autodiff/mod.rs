//! Reverse-mode automatic differentiation over dense tensors.

pub mod gradcheck;
pub mod ops;
pub mod scalar;
pub mod tape;
pub mod tensor;

pub use gradcheck::{grad_check, GradCheckReport};
pub use scalar::Scalar;
pub use tape::{Tape, VarId};
pub use tensor::Tensor;
