//! Scalar reverse-mode differentiation, dense networks and Adam.

mod adam;
pub mod check;
mod net;
mod real;
mod tape;

pub use adam::{AdamConfig, AdamState};
pub use net::{Activation, DenseNet, LayerShape};
pub use real::Real;
pub use tape::{Gradients, NodeId, Tape, Var};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DiffError {
    #[error("non-finite value {value} at node {}", node.0)]
    NonFinite { node: NodeId, value: f64 },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("network has no layers")]
    EmptyNetwork,
    #[error("non-finite gradient at index {index}")]
    NonFiniteGradient { index: usize },
}
