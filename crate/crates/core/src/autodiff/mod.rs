//! Minimal reverse-mode automatic differentiation over dense `f64` tensors.

mod gradcheck;
mod ops;
mod tape;
mod tensor;

pub use gradcheck::{gradcheck, GradcheckReport};
pub use ops::{Primitive, LOG_FLOOR};
pub use tape::{Tape, Var};
pub use tensor::{argmax, Tensor};

pub(crate) use ops::forward as eval_primitive;

/// Evaluates a primitive on plain tensors without recording anything.
pub fn apply_primitive(op: Primitive, operands: &[&Tensor]) -> crate::Result<Tensor> {
    ops::forward(op, operands).map(|(t, _)| t)
}
