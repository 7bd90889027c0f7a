use alloc::vec::Vec;

use rand::Rng;

use super::{pi_loss, q_loss, v_loss, Agent, SacError, Transition};
use crate::diff::{AdamConfig, AdamState, Tape};
use crate::policy::PolicyParams;

/// `target ← (1 − τ)·target + τ·online`.
pub fn polyak_update(target: &mut [f64], online: &[f64], tau: f64) {
    assert_eq!(target.len(), online.len(), "Polyak arrays must align");
    for (t, &o) in target.iter_mut().zip(online) {
        *t = (1.0 - tau) * *t + tau * o;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearnConfig {
    /// Entropy temperature.
    pub alpha: f64,
    pub gamma: f64,
    pub tau: f64,
    pub lr_theta: f64,
    pub lr_phi: f64,
    pub lr_v: f64,
    pub lr_q: f64,
    /// When set, the critics see actions clipped to `[−bound, bound]`, the
    /// action the environment actually executes.
    pub action_bound: Option<f64>,
}

impl Default for LearnConfig {
    fn default() -> Self {
        Self { alpha: 0.05, gamma: 0.99, tau: 0.005, lr_theta: 3e-4, lr_phi: 3e-4, lr_v: 3e-4, lr_q: 3e-4, action_bound: None }
    }
}

/// Losses recorded during one learning step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Losses {
    pub v: f64,
    pub q: f64,
    /// Policy loss at the base-policy step.
    pub pi: f64,
    /// Policy loss at the flow step, when the chain is non-empty.
    pub pi_flow: Option<f64>,
    pub entropy: f64,
}

impl Losses {
    /// First loss that is non-finite or beyond `limit` in magnitude.
    pub fn diverged(&self, limit: f64) -> Option<(&'static str, f64)> {
        let mut all = [("v", self.v), ("q", self.q), ("pi", self.pi), ("pi_flow", 0.0)];
        if let Some(p) = self.pi_flow {
            all[3].1 = p;
        }
        all.into_iter().find(|(_, x)| !x.is_finite() || x.abs() > limit)
    }
}

/// Sub-steps of one learning step, in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UpdatePhase {
    /// Value network ν.
    Value,
    /// Critic ω (both critics when twinned).
    Critic,
    /// Base policy θ: mean and scale.
    BasePolicy,
    /// Flow parameters φ; skipped without flows.
    Flows,
    /// Polyak average into the target value network.
    Target,
}

/// An agent with one Adam state per parameter array.
///
/// Each learning step updates, in order: the value network ν, the critic ω,
/// the base policy θ (mean and scale), then the flow parameters φ with a
/// freshly evaluated policy loss. Every group changes only in its own step.
#[derive(Debug)]
pub struct Learner {
    pub agent: Agent,
    pub config: LearnConfig,
    adam_v: AdamState,
    adam_q: AdamState,
    adam_q2: Option<AdamState>,
    adam_mean: AdamState,
    adam_scale: AdamState,
    adam_flows: AdamState,
    tape: Tape,
    steps: usize,
}

impl Learner {
    pub fn new(agent: Agent, config: LearnConfig) -> Self {
        let adam = |len: usize, lr: f64| AdamState::new(len, AdamConfig::with_lr(lr));
        let c = &agent.critics;
        let p = &agent.policy;
        Self {
            adam_v: adam(c.v.param_count(), config.lr_v),
            adam_q: adam(c.q.param_count(), config.lr_q),
            adam_q2: c.q2.as_ref().map(|q2| adam(q2.param_count(), config.lr_q)),
            adam_mean: adam(p.mean_net().param_count(), config.lr_theta),
            adam_scale: adam(p.scale().params().len(), config.lr_theta),
            adam_flows: adam(p.flows().param_count(), config.lr_phi),
            tape: Tape::with_capacity(1 << 16, 1 << 18),
            agent,
            config,
            steps: 0,
        }
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn into_agent(self) -> Agent {
        self.agent
    }

    /// One pass of the four updates on `batch`, drawing policy noise from `rng`.
    pub fn learn_step<R: Rng + ?Sized>(&mut self, batch: &[&Transition], rng: &mut R) -> Result<Losses, SacError> {
        self.learn_step_observed(batch, rng, &mut |_, _| {})
    }

    /// [`Learner::learn_step`], calling `observe` after each phase with the
    /// agent as that phase left it.
    pub fn learn_step_observed<R: Rng + ?Sized>(
        &mut self,
        batch: &[&Transition],
        rng: &mut R,
        observe: &mut dyn FnMut(UpdatePhase, &Agent),
    ) -> Result<Losses, SacError> {
        let cfg = self.config;
        let v = self.update_value(batch, rng, cfg)?;
        observe(UpdatePhase::Value, &self.agent);
        let q = self.update_critic(batch, cfg)?;
        observe(UpdatePhase::Critic, &self.agent);
        let (pi, entropy) = self.update_base_policy(batch, rng, cfg)?;
        observe(UpdatePhase::BasePolicy, &self.agent);
        let pi_flow = if self.agent.policy.flows().is_empty() {
            None
        } else {
            let loss = self.update_flows(batch, rng, cfg)?;
            observe(UpdatePhase::Flows, &self.agent);
            Some(loss)
        };
        let critics = &mut self.agent.critics;
        polyak_update(critics.v_target.params_mut(), critics.v.params(), cfg.tau);
        observe(UpdatePhase::Target, &self.agent);
        self.steps += 1;
        Ok(Losses { v, q, pi, pi_flow, entropy })
    }

    fn update_value<R: Rng + ?Sized>(&mut self, batch: &[&Transition], rng: &mut R, cfg: LearnConfig) -> Result<f64, SacError> {
        self.tape.clear();
        let (loss, grads) = {
            let params = self.tape.vars(self.agent.critics.v.params());
            let loss = v_loss(batch, &self.agent.policy, &self.agent.critics, &params, cfg.alpha, cfg.action_bound, rng)?;
            let g = self.tape.backward(loss)?;
            (crate::diff::Real::value(loss), g.wrt_all(&params))
        };
        self.adam_v.step(self.agent.critics.v.params_mut(), &grads)?;
        Ok(loss)
    }

    fn update_critic(&mut self, batch: &[&Transition], cfg: LearnConfig) -> Result<f64, SacError> {
        self.tape.clear();
        let critics = &self.agent.critics;
        let (loss1, grads1) = {
            let params = self.tape.vars(critics.q.params());
            let loss = q_loss(batch, &critics.q, &params, &critics.v_target, cfg.gamma)?;
            let g = self.tape.backward(loss)?;
            (crate::diff::Real::value(loss), g.wrt_all(&params))
        };
        let second = match &critics.q2 {
            Some(q2) => {
                self.tape.clear();
                let params = self.tape.vars(q2.params());
                let loss = q_loss(batch, q2, &params, &critics.v_target, cfg.gamma)?;
                let g = self.tape.backward(loss)?;
                Some((crate::diff::Real::value(loss), g.wrt_all(&params)))
            }
            None => None,
        };
        let critics = &mut self.agent.critics;
        self.adam_q.step(critics.q.params_mut(), &grads1)?;
        match (second, critics.q2.as_mut(), self.adam_q2.as_mut()) {
            (Some((loss2, grads2)), Some(q2), Some(adam)) => {
                adam.step(q2.params_mut(), &grads2)?;
                Ok(0.5 * (loss1 + loss2))
            }
            _ => Ok(loss1),
        }
    }

    fn update_base_policy<R: Rng + ?Sized>(
        &mut self,
        batch: &[&Transition],
        rng: &mut R,
        cfg: LearnConfig,
    ) -> Result<(f64, f64), SacError> {
        self.tape.clear();
        let (loss, entropy, g_mean, g_scale) = {
            let policy = &self.agent.policy;
            let p = policy.params();
            let mean = self.tape.vars(p.mean);
            let scale = self.tape.vars(p.scale);
            let flows = self.tape.vars(p.flows);
            let params = PolicyParams { mean: &mean, scale: &scale, flows: &flows };
            let pi = pi_loss(batch, policy, params, &self.agent.critics, cfg.alpha, cfg.action_bound, rng)?;
            let g = self.tape.backward(pi.loss)?;
            (crate::diff::Real::value(pi.loss), pi.entropy, g.wrt_all(&mean), g.wrt_all(&scale))
        };
        let policy = &mut self.agent.policy;
        self.adam_mean.step(policy.mean_net_mut().params_mut(), &g_mean)?;
        self.adam_scale.step(policy.scale_mut().params_mut(), &g_scale)?;
        Ok((loss, entropy))
    }

    fn update_flows<R: Rng + ?Sized>(&mut self, batch: &[&Transition], rng: &mut R, cfg: LearnConfig) -> Result<f64, SacError> {
        self.tape.clear();
        let (loss, grads): (f64, Vec<f64>) = {
            let policy = &self.agent.policy;
            let p = policy.params();
            let mean = self.tape.vars(p.mean);
            let scale = self.tape.vars(p.scale);
            let flows = self.tape.vars(p.flows);
            let params = PolicyParams { mean: &mean, scale: &scale, flows: &flows };
            let pi = pi_loss(batch, policy, params, &self.agent.critics, cfg.alpha, cfg.action_bound, rng)?;
            let g = self.tape.backward(pi.loss)?;
            (crate::diff::Real::value(pi.loss), g.wrt_all(&flows))
        };
        self.adam_flows.step(self.agent.policy.flows_mut().params_mut(), &grads)?;
        Ok(loss)
    }
}
