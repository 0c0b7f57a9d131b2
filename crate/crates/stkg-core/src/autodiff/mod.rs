//! Reverse-mode automatic differentiation over dense row-major `f64` matrices.
//!
//! Every forward operation appends a node to a [`Tape`]; [`Tape::backward`]
//! walks the nodes in reverse creation order and accumulates gradients into
//! every node that requires them. Tensors are lightweight handles into the
//! tape arena, so a fresh tape per forward pass is the expected usage.

mod adam;
mod gradcheck;
mod params;
mod tape;


pub use adam::AdamState;
pub use gradcheck::{check_gradients, check_param_gradients, GradCheckReport};
pub use params::{Gradients, Param, ParamGroup, ParamId, ParamStore};
pub use tape::{DiffTensor, Tape};
