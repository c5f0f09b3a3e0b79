//! Dense `f64` tensors, a define-by-run gradient tape and Adam.

mod adam;
mod graph;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use graph::{Graph, ParamId, ParamStore, Var};
pub use tensor::Tensor;

pub(crate) use graph::stable_sigmoid;
