//! Reverse-mode automatic differentiation over [`Tensor`](crate::tensor::Tensor)s.

mod dd;
mod gradcheck;
mod graph;

pub use dd::Dd;
pub use gradcheck::{grad_check, grad_check_dd, relative_error, GradCheckReport, InputCheck};
pub use graph::{Graph, Var};
