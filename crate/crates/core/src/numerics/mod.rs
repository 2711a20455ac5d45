//! Dense linear algebra, activation primitives and gradient checking.
//!
//! All arithmetic is `f64`. Backward passes elsewhere in the crate are written
//! by hand and certified with [`grad_check`].

mod gradcheck;
mod layers;
mod matrix;
mod ops;
mod params;

pub use gradcheck::{grad_check, GradCheckReport};
pub use layers::{Init, Linear};
pub use matrix::{dot, norm, Matrix};
pub use ops::{argmax, cross_entropy, gelu, gelu_grad, gelu_matrix, softmax, softmax_in_place};
pub use params::{Param, ParamId, ParamStore};
