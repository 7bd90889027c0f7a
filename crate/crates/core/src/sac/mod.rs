//! Off-policy training: replay buffer, the value/critic/policy losses, the
//! learner that applies one gradient step per parameter group, and the outer
//! rollout loop.

mod buffer;
mod learner;
mod losses;
mod train;

pub use buffer::{ReplayBuffer, Transition};
pub use learner::{polyak_update, LearnConfig, Learner, Losses, UpdatePhase};
pub use losses::{clip_action, pi_loss, q_loss, v_loss, PiLoss};
pub use train::{
    evaluate, rollout, train, EvalReport, LogRow, TrainConfig, TrainFailure, TrainObserver, TrainOutcome,
    TrainingLog, Trajectory,
};

use alloc::vec::Vec;

use rand::Rng;

use crate::diff::{Activation, DenseNet, DiffError};
use crate::env::EnvError;
use crate::flows::FlowFamily;
use crate::policy::{NfPolicy, NoiseModel, PolicyConfig, PolicyError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SacError {
    #[error("transition component has length {found}, expected {expected}")]
    TransitionShape { expected: usize, found: usize },
    #[error("non-finite reward")]
    NonFiniteReward,
    #[error("replay buffer holds {have} transitions, {need} needed")]
    NotReady { have: usize, need: usize },
    #[error("empty minibatch")]
    EmptyBatch,
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("loss `{name}` diverged to {value} at learning step {step}")]
    Diverged { name: &'static str, value: f64, step: usize },
    #[error("invalid configuration: {0}")]
    Config(&'static str),
}

/// Architecture of the policy and critics, independent of the task dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct Architecture {
    pub policy_hidden: Vec<usize>,
    pub policy_activation: Activation,
    pub noise: NoiseModel,
    pub flow_family: FlowFamily,
    pub flow_count: usize,
    pub critic_hidden: Vec<usize>,
    pub critic_activation: Activation,
    pub twin_q: bool,
}

impl Architecture {
    pub fn policy_config(&self, obs_dim: usize, action_dim: usize) -> PolicyConfig {
        PolicyConfig {
            obs_dim,
            action_dim,
            hidden: self.policy_hidden.clone(),
            activation: self.policy_activation,
            noise: self.noise,
            flow_family: self.flow_family,
            flow_count: self.flow_count,
        }
    }
}

/// `Q_ω(s, a)`, an optional second critic, `V_ν(s)` and its Polyak copy.
#[derive(Debug, Clone, PartialEq)]
pub struct Critics {
    pub q: DenseNet,
    pub q2: Option<DenseNet>,
    pub v: DenseNet,
    pub v_target: DenseNet,
}

impl Critics {
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        activation: Activation,
        twin_q: bool,
        rng: &mut R,
    ) -> Result<Self, DiffError> {
        let sizes = |input: usize| {
            let mut s = Vec::with_capacity(hidden.len() + 2);
            s.push(input);
            s.extend_from_slice(hidden);
            s.push(1);
            s
        };
        let mut make = |input: usize| -> Result<DenseNet, DiffError> {
            let mut net = DenseNet::mlp(&sizes(input), activation, Activation::Identity)?;
            net.init_uniform(rng);
            Ok(net)
        };
        let q = make(obs_dim + action_dim)?;
        let q2 = if twin_q { Some(make(obs_dim + action_dim)?) } else { None };
        let v = make(obs_dim)?;
        let v_target = v.clone();
        Ok(Self { q, q2, v, v_target })
    }

    /// `Q(s, a)`, the smaller of the two critics when twinned.
    pub fn q_value(&self, state: &[f64], action: &[f64]) -> Result<f64, DiffError> {
        let input = concat(state, action);
        let q1 = self.q.eval(&input)?[0];
        match &self.q2 {
            Some(q2) => Ok(q1.min(q2.eval(&input)?[0])),
            None => Ok(q1),
        }
    }
}

pub(crate) fn concat<T: Copy>(a: &[T], b: &[T]) -> Vec<T> {
    let mut v = Vec::with_capacity(a.len() + b.len());
    v.extend_from_slice(a);
    v.extend_from_slice(b);
    v
}

/// Policy plus critics.
#[derive(Debug, Clone, PartialEq)]
pub struct Agent {
    pub policy: NfPolicy,
    pub critics: Critics,
}

impl Agent {
    pub fn new<R: Rng + ?Sized>(
        arch: &Architecture,
        obs_dim: usize,
        action_dim: usize,
        rng: &mut R,
    ) -> Result<Self, SacError> {
        let policy = NfPolicy::new(&arch.policy_config(obs_dim, action_dim), rng)?;
        let critics = Critics::new(obs_dim, action_dim, &arch.critic_hidden, arch.critic_activation, arch.twin_q, rng)?;
        Ok(Self { policy, critics })
    }
}
