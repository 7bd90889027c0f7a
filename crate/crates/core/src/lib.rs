//! Soft actor-critic with normalizing-flow policies.
//!
//! The crate is `no_std` (it needs `alloc`) and carries everything that is pure
//! computation: a scalar reverse-mode differentiation tape with dense networks and
//! Adam, radial/planar flows, the flow policy, the off-policy training engine,
//! the point-mass environments and the policy-shape diagnostics. File formats,
//! configuration and the command line live in the `sacnf` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod analysis;
pub mod diff;
pub mod env;
pub mod flows;
pub mod math;
pub mod policy;
pub mod rng;
pub mod sac;

pub use diff::{AdamConfig, AdamState, Activation, DenseNet, DiffError, Gradients, Real, Tape, Var};
pub use env::{EnvKind, Environment, PointEnv, PointState};
pub use flows::{FlowChain, FlowFamily, FlowLayer};
pub use policy::{ActionSample, NfPolicy, NoiseModel, PolicyConfig};
pub use rng::{Stream, Streams};
pub use sac::{Agent, Architecture, LearnConfig, Learner, TrainConfig, TrainingLog, Transition};
