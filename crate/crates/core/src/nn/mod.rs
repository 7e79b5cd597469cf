//! Minimal CPU tensor and autodiff engine backing both networks.

mod graph;
mod params;
mod tensor;

pub use graph::{Graph, Var};
#[cfg(test)]
pub(crate) use graph::softmax;
pub use params::{Gradients, Param, ParamId, ParamKind, ParameterSet, PARAMS_VERSION};
pub use tensor::Tensor;
