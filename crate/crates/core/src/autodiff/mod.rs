//! Reverse-mode automatic differentiation over dense row-major matrices.
//!
//! A [`Tape`] records every primitive applied during a forward pass. Each
//! recorded node keeps its value and whatever it needs for its backward rule;
//! [`Tape::backward`] walks the nodes in reverse creation order, which is a
//! valid reverse topological order because a node can only reference nodes
//! created before it.

mod tape;
mod tensor;

pub use tape::{Tape, Var, MASK_NEG};
pub use tensor::Tensor;
