//! Experiment configuration: a flat TOML file with a strict schema.
//!
//! Unknown keys are rejected so a misspelled hyperparameter cannot silently
//! fall back to its default. Step-valued keys carry their unit in the name.

use std::path::{Path, PathBuf};

use sacnf_core::sac::{Architecture, LearnConfig, TrainConfig};
use sacnf_core::{Activation, EnvKind, FlowFamily, NoiseModel};
use serde::Deserialize;

use crate::error::Error;

/// Flow family choice; `none` is the plain Gaussian SAC baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlowChoice {
    Radial,
    Planar,
    None,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// `deceptive`, `four-goal` or `sparse`.
    pub env: String,
    #[serde(default = "defaults::flow_family")]
    pub flow_family: FlowChoice,
    #[serde(default)]
    pub flow_count: usize,
    /// `conditional` or `average`.
    #[serde(default = "defaults::noise")]
    pub noise: String,
    #[serde(default = "defaults::policy_hidden")]
    pub policy_hidden: Vec<usize>,
    #[serde(default = "defaults::tanh")]
    pub policy_activation: String,
    #[serde(default = "defaults::critic_hidden")]
    pub critic_hidden: Vec<usize>,
    #[serde(default = "defaults::relu")]
    pub critic_activation: String,
    #[serde(default)]
    pub twin_q: bool,
    /// Feed the critics the clipped action the environment executes.
    #[serde(default = "defaults::yes")]
    pub clip_critic_actions: bool,

    #[serde(default = "defaults::alpha_ent")]
    pub alpha_ent: f64,
    #[serde(default = "defaults::gamma")]
    pub gamma: f64,
    #[serde(default = "defaults::tau")]
    pub tau: f64,
    #[serde(default = "defaults::lr")]
    pub lr_theta: f64,
    #[serde(default = "defaults::lr")]
    pub lr_phi: f64,
    #[serde(default = "defaults::lr")]
    pub lr_nu: f64,
    #[serde(default = "defaults::lr")]
    pub lr_omega: f64,

    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    #[serde(default = "defaults::buffer_capacity")]
    pub buffer_capacity: usize,
    pub total_env_steps: usize,
    #[serde(default = "defaults::warmup_env_steps")]
    pub warmup_env_steps: usize,
    #[serde(default = "defaults::one")]
    pub updates_per_env_step: usize,
    #[serde(default = "defaults::eval_every_env_steps")]
    pub eval_every_env_steps: usize,
    #[serde(default = "defaults::eval_episodes")]
    pub eval_episodes: usize,
    #[serde(default)]
    pub checkpoint_every_env_steps: usize,
    #[serde(default = "defaults::divergence_limit")]
    pub divergence_limit: f64,

    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,

    /// States at which the final shape analysis samples actions.
    #[serde(default = "defaults::analysis_states")]
    pub analysis_states: usize,
    #[serde(default = "defaults::analysis_actions")]
    pub analysis_actions: usize,
    #[serde(default = "defaults::gap_k_max")]
    pub gap_k_max: usize,
    #[serde(default = "defaults::gap_refs")]
    pub gap_refs: usize,
    /// Stochastic episodes whose terminal states feed the histogram.
    #[serde(default = "defaults::analysis_rollouts")]
    pub analysis_rollouts: usize,
}

mod defaults {
    use super::FlowChoice;

    pub fn flow_family() -> FlowChoice {
        FlowChoice::Radial
    }
    pub fn noise() -> String {
        "conditional".into()
    }
    pub fn policy_hidden() -> Vec<usize> {
        vec![32]
    }
    pub fn critic_hidden() -> Vec<usize> {
        vec![32, 32]
    }
    pub fn tanh() -> String {
        "tanh".into()
    }
    pub fn relu() -> String {
        "relu".into()
    }
    pub fn alpha_ent() -> f64 {
        0.05
    }
    pub fn gamma() -> f64 {
        0.99
    }
    pub fn tau() -> f64 {
        0.005
    }
    pub fn lr() -> f64 {
        3e-4
    }
    pub fn batch_size() -> usize {
        64
    }
    pub fn buffer_capacity() -> usize {
        1_000_000
    }
    pub fn warmup_env_steps() -> usize {
        1000
    }
    pub fn yes() -> bool {
        true
    }
    pub fn one() -> usize {
        1
    }
    pub fn eval_every_env_steps() -> usize {
        1000
    }
    pub fn eval_episodes() -> usize {
        10
    }
    pub fn divergence_limit() -> f64 {
        1e6
    }
    pub fn analysis_states() -> usize {
        20
    }
    pub fn analysis_actions() -> usize {
        250
    }
    pub fn gap_k_max() -> usize {
        6
    }
    pub fn gap_refs() -> usize {
        10
    }
    pub fn analysis_rollouts() -> usize {
        400
    }
}

fn invalid(field: &'static str, reason: impl Into<String>) -> Error {
    Error::Config { field: field.to_string(), reason: reason.into() }
}

impl ExperimentConfig {
    /// Parse and validate. Errors name the offending field.
    pub fn parse(text: &str) -> Result<Self, Error> {
        let config: Self = toml::from_str(text).map_err(|e| {
            let field = toml_error_field(&e).unwrap_or_else(|| "<document>".to_string());
            Error::Config { field, reason: e.message().to_string() }
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<(Self, String), Error> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok((Self::parse(&text)?, text))
    }

    pub fn validate(&self) -> Result<(), Error> {
        self.env_kind()?;
        self.noise_model()?;
        activation("policy_activation", &self.policy_activation)?;
        activation("critic_activation", &self.critic_activation)?;
        if self.flow_family == FlowChoice::None && self.flow_count != 0 {
            return Err(invalid("flow_count", "must be 0 when flow_family = \"none\""));
        }
        if self.policy_hidden.contains(&0) {
            return Err(invalid("policy_hidden", "layer sizes must be positive"));
        }
        if self.critic_hidden.contains(&0) {
            return Err(invalid("critic_hidden", "layer sizes must be positive"));
        }
        let positive = |field: &'static str, x: f64| {
            if x > 0.0 && x.is_finite() {
                Ok(())
            } else {
                Err(invalid(field, format!("must be a positive finite number, got {x}")))
            }
        };
        positive("lr_theta", self.lr_theta)?;
        positive("lr_phi", self.lr_phi)?;
        positive("lr_nu", self.lr_nu)?;
        positive("lr_omega", self.lr_omega)?;
        positive("divergence_limit", self.divergence_limit)?;
        if !(self.alpha_ent >= 0.0 && self.alpha_ent.is_finite()) {
            return Err(invalid("alpha_ent", format!("must be finite and non-negative, got {}", self.alpha_ent)));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(invalid("gamma", format!("must lie in [0, 1), got {}", self.gamma)));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(invalid("tau", format!("must lie in [0, 1], got {}", self.tau)));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch_size", "must be at least 1"));
        }
        if self.buffer_capacity < self.batch_size {
            return Err(invalid("buffer_capacity", "must be at least batch_size"));
        }
        if self.eval_every_env_steps > 0 && self.eval_episodes == 0 {
            return Err(invalid("eval_episodes", "must be at least 1 when evaluating"));
        }
        if self.seeds.is_empty() {
            return Err(invalid("seeds", "at least one seed is required"));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(invalid("seeds", "seeds must be distinct"));
        }
        if self.analysis_actions < 50 {
            return Err(invalid("analysis_actions", "must be at least 50"));
        }
        if self.analysis_states == 0 {
            return Err(invalid("analysis_states", "must be at least 1"));
        }
        if self.gap_k_max == 0 || self.analysis_actions < 2 * self.gap_k_max {
            return Err(invalid("gap_k_max", "must be positive and at most analysis_actions / 2"));
        }
        if self.gap_refs == 0 {
            return Err(invalid("gap_refs", "must be at least 1"));
        }
        if self.analysis_rollouts == 0 {
            return Err(invalid("analysis_rollouts", "must be at least 1"));
        }
        Ok(())
    }

    pub fn env_kind(&self) -> Result<EnvKind, Error> {
        EnvKind::from_name(&self.env).map_err(|_| invalid("env", format!("unknown environment `{}`", self.env)))
    }

    pub fn noise_model(&self) -> Result<NoiseModel, Error> {
        NoiseModel::from_tag(&self.noise).ok_or_else(|| invalid("noise", format!("unknown noise model `{}`", self.noise)))
    }

    pub fn architecture(&self) -> Result<Architecture, Error> {
        let (flow_family, flow_count) = match self.flow_family {
            FlowChoice::Radial => (FlowFamily::Radial, self.flow_count),
            FlowChoice::Planar => (FlowFamily::Planar, self.flow_count),
            FlowChoice::None => (FlowFamily::Radial, 0),
        };
        Ok(Architecture {
            policy_hidden: self.policy_hidden.clone(),
            policy_activation: activation("policy_activation", &self.policy_activation)?,
            noise: self.noise_model()?,
            flow_family,
            flow_count,
            critic_hidden: self.critic_hidden.clone(),
            critic_activation: activation("critic_activation", &self.critic_activation)?,
            twin_q: self.twin_q,
        })
    }

    pub fn train_config(&self) -> Result<TrainConfig, Error> {
        Ok(TrainConfig {
            arch: self.architecture()?,
            learn: LearnConfig {
                alpha: self.alpha_ent,
                gamma: self.gamma,
                tau: self.tau,
                lr_theta: self.lr_theta,
                lr_phi: self.lr_phi,
                lr_v: self.lr_nu,
                lr_q: self.lr_omega,
                action_bound: self.clip_critic_actions.then_some(sacnf_core::env::ACTION_BOUND),
            },
            total_steps: self.total_env_steps,
            warmup_steps: self.warmup_env_steps,
            updates_per_step: self.updates_per_env_step,
            batch_size: self.batch_size,
            buffer_capacity: self.buffer_capacity,
            eval_every: self.eval_every_env_steps,
            eval_episodes: self.eval_episodes,
            checkpoint_every: self.checkpoint_every_env_steps,
            divergence_limit: self.divergence_limit,
        })
    }
}

fn activation(field: &'static str, tag: &str) -> Result<Activation, Error> {
    Activation::from_tag(tag).ok_or_else(|| invalid(field, format!("unknown activation `{tag}`")))
}

/// Best-effort extraction of the key a TOML error refers to.
fn toml_error_field(e: &toml::de::Error) -> Option<String> {
    let msg = e.message();
    // "unknown field `foo`, expected one of ..." / "missing field `foo`"
    if let Some(start) = msg.find('`') {
        if let Some(len) = msg[start + 1..].find('`') {
            return Some(msg[start + 1..start + 1 + len].to_string());
        }
    }
    None
}
