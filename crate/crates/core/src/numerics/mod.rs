//! Dense tensors, reverse-mode autodiff and finite-difference gradient checks.

mod float;
mod gradcheck;
mod graph;
mod params;
mod tensor;

use std::rc::Rc;

pub use float::Float;
pub use gradcheck::{grad_check, CoordSelection, GradCheckReport};
pub use graph::{Activation, Gradients, Graph, Mask, Var, GATHER_ZERO};
pub use params::ParamStore;
pub use tensor::Tensor;

use crate::error::Result;

/// Single-head attention of `Q, K, V: [T, d]` under an explicit mask.
pub fn causal_attention<T: Float>(g: &mut Graph<T>, q: Var, k: Var, v: Var, mask: Mask) -> Result<Var> {
    g.attention(q, k, v, &Rc::new(mask), 1, 1)
}
