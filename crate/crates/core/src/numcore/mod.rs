//! Dense tensors, a define-by-run reverse-mode graph and the Adam optimizer.

mod adam;
mod graph;
pub(crate) mod kernels;
mod params;
pub mod rng;
mod tensor;

pub use adam::AdamState;
pub use graph::{binary_cross_entropy, Graph, Var, PROB_EPS};
pub use kernels::log_sum_exp;
pub use params::{Grads, ParamId, ParamStore};
pub use tensor::Tensor;
