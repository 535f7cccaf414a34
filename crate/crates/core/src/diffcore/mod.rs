//! Dense arrays, a recording graph with reverse-mode differentiation, and
//! SGD with momentum.

mod graph;
mod optim;
mod params;
mod tensor;

pub use graph::{elu, sigmoid, Gradients, Graph, NodeId};
pub use optim::{LrSchedule, SgdState};
pub use params::{ParamId, ParamSet};
pub use tensor::{log_sum_exp, Tensor};

pub(crate) use tensor::argmax;

#[cfg(test)]
#[allow(clippy::approx_constant)]
mod tests;
