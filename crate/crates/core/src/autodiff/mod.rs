//! Dense `f64` tensors, a define-by-run tape for reverse-mode gradients,
//! and a finite-difference oracle to check it against.
//!
//! The primitive set is deliberately closed: matmul, transpose, add,
//! broadcast bias add, hadamard, tanh, sigmoid, row/column concat and
//! slice, scalar scale, sum, mean, mask apply, row softmax, fused
//! cross-entropy and row gather. Everything the language model needs is
//! composed from these.

mod gradcheck;
mod ops;
mod tape;
mod tensor;

pub use gradcheck::{finite_difference_gradients, max_relative_error, Parameterized};
pub use ops::{cross_entropy_from_logits, log_sum_exp, matmul, row_nll, softmax_rows};
pub use tape::{Gradients, ParamId, Tape, Var};
pub use tensor::Tensor;

pub(crate) use ops::softmax_in_place;
