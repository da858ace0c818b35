//! Dense tensors and a small reverse-mode differentiation engine covering
//! exactly the operations the network needs.

mod grad_check;
mod graph;
mod params;
mod tensor;

pub use grad_check::{grad_check, relative_error, GradCheckReport, REL_ERR_FLOOR};
pub use graph::{BinaryKind, Graph, NodeId, MASK_SURROGATE, PROB_FLOOR};
pub use params::{Param, ParamId, ParamStore};
pub use tensor::{Tensor, TensorError};
