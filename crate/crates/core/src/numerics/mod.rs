//! Dense tensors, a reverse-mode compute graph, and the optimizer.

pub mod checkpoint;
pub mod gradcheck;
mod graph;
mod optim;
mod params;
mod tensor;

pub use graph::{ComputeGraph, FocalParams, Gradients, Var, LOG_WIDTH_CLAMP};
pub use optim::{AdamConfig, OptimizerState};
pub use params::{BoundParams, ParamStore};
pub use tensor::{interpolate_rows, linear_interpolate, Tensor};
