//! Dense matrix primitives and reverse-mode differentiation.

mod finite_diff;
mod matrix;
mod tape;

pub use finite_diff::{central_gradient, finite_diff_check, relative_error};
pub use matrix::{sigmoid, Axis, Matrix};
pub use tape::{Gradients, Tape, Var};
