//! Dense tensors, reverse-mode gradients and the Adam optimizer.
//!
//! All math is `f64`. Every op is deterministic for identical inputs.

mod adam;
mod eigen;
mod graph;
mod params;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use eigen::{symmetric_eigen, SymmetricEigen};
pub use graph::{FusedOp, Gradients, Graph, Var};
pub use params::{BoundParams, ParamSet};
pub use tensor::{
    bias_add, cosine, cosine_matrix, dot, l2_normalize_rows, matmul, mean_rows, norm, normalized,
    relu, softmax_rows, Tensor,
};

pub(crate) use graph::normalize_rows_vjp;
pub(crate) use tensor::{gemm, softmax_in_place};
