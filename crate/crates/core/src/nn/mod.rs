//! Minimal reverse-mode autodiff over 2-D f32 tensors, sized for the
//! desk-scale models in this crate.

mod graph;
mod params;
mod tensor;

pub use graph::{bce_term, Graph, Segment, Var, BCE_EPS};
pub use params::{AdamW, Group, LinearWarmup, Param, ParamId, ParamStore, Plateau};
pub use tensor::{gelu, gemm, layer_norm, matmul, matmul_t, sigmoid, softmax_in_place, Tensor, LN_EPS};

#[cfg(test)]
mod gradcheck;
