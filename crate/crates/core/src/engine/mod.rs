//! Dense tensors, a reverse-mode tape over the handful of operations the
//! model needs, and a finite-difference oracle for checking it.

mod gradcheck;
pub mod kernels;
mod tape;
mod tensor;

pub use gradcheck::finite_diff_check;
pub use tape::{Gradients, Tape, Var};
pub use tensor::{Scalar, Tensor};

/// Stabilizer used by every layer norm in the model.
pub const LAYER_NORM_EPS: f64 = 1e-5;
