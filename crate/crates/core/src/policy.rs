//! Flow policy: a state-conditioned diagonal Gaussian pushed through a flow chain.
//!
//! Sampling follows the reparametrization path
//!
//! ```text
//! ε ~ N(0, I),  z = ε ⊙ σ + μ(s),  a = f_N ∘ … ∘ f_1(z)
//! log π(a|s) = log N(ε; 0, I) − Σ_k log σ_k − Σ_i log|det ∂f_i|
//! ```
//!
//! where `σ` comes either from a state-conditioned log-scale network
//! ([`NoiseModel::Conditional`]) or from a free log-scale vector shared by all
//! states ([`NoiseModel::Average`]). The density is only ever evaluated along
//! the sampled path, so the flows never need to be inverted.

use alloc::vec::Vec;

use rand::Rng;

use crate::diff::{Activation, DenseNet, DiffError, Real};
use crate::flows::{FlowChain, FlowError, FlowFamily};
use crate::math;

/// Log-scales are clamped to this range before exponentiation.
pub const LOG_SCALE_MIN: f64 = -5.0;
pub const LOG_SCALE_MAX: f64 = 2.0;
/// Initial log-scale.
pub const LOG_SCALE_INIT: f64 = -1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NoiseModel {
    /// State-dependent scale `σ(s)`.
    Conditional,
    /// One scale vector for all states.
    Average,
}

impl NoiseModel {
    pub fn tag(self) -> &'static str {
        match self {
            NoiseModel::Conditional => "conditional",
            NoiseModel::Average => "average",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "conditional" => Some(NoiseModel::Conditional),
            "average" => Some(NoiseModel::Average),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PolicyError {
    #[error("non-finite output from the {head} head")]
    NonFinite { head: &'static str },
    #[error(transparent)]
    Network(#[from] DiffError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error("noise length {found} does not match action dimension {expected}")]
    NoiseDimension { expected: usize, found: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyConfig {
    pub obs_dim: usize,
    pub action_dim: usize,
    /// Hidden layer widths of the mean (and conditional scale) network.
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub noise: NoiseModel,
    pub flow_family: FlowFamily,
    /// Zero gives a plain Gaussian policy.
    pub flow_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScaleModel {
    /// Log-scale network `s → ℝ^d`.
    Conditional(DenseNet),
    /// Free log-scale vector.
    Average(Vec<f64>),
}

impl ScaleModel {
    pub fn params(&self) -> &[f64] {
        match self {
            ScaleModel::Conditional(net) => net.params(),
            ScaleModel::Average(v) => v,
        }
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        match self {
            ScaleModel::Conditional(net) => net.params_mut(),
            ScaleModel::Average(v) => v,
        }
    }

    pub fn noise_model(&self) -> NoiseModel {
        match self {
            ScaleModel::Conditional(_) => NoiseModel::Conditional,
            ScaleModel::Average(_) => NoiseModel::Average,
        }
    }
}

/// Borrowed view of every policy parameter, plain or recorded.
#[derive(Debug, Clone, Copy)]
pub struct PolicyParams<'a, T> {
    pub mean: &'a [T],
    pub scale: &'a [T],
    pub flows: &'a [T],
}

/// One reparametrized draw along the sampling path.
#[derive(Debug, Clone)]
pub struct PathSample<T> {
    pub action: Vec<T>,
    pub log_prob: T,
    pub pre_flow: Vec<T>,
}

/// A plain action draw with everything needed to audit it.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionSample {
    pub action: Vec<f64>,
    pub log_prob: f64,
    pub noise: Vec<f64>,
    pub pre_flow: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NfPolicy {
    mean: DenseNet,
    scale: ScaleModel,
    flows: FlowChain,
}

/// `log N(ε; 0, I)`.
pub fn standard_normal_log_density(noise: &[f64]) -> f64 {
    let mut acc = 0.0;
    for &e in noise {
        acc -= 0.5 * e * e;
    }
    acc - 0.5 * noise.len() as f64 * math::LN_2PI
}

impl NfPolicy {
    pub fn new<R: Rng + ?Sized>(config: &PolicyConfig, rng: &mut R) -> Result<Self, PolicyError> {
        let mut sizes = Vec::with_capacity(config.hidden.len() + 2);
        sizes.push(config.obs_dim);
        sizes.extend_from_slice(&config.hidden);
        sizes.push(config.action_dim);
        let mut mean = DenseNet::mlp(&sizes, config.activation, Activation::Identity)?;
        mean.init_uniform(rng);
        let scale = match config.noise {
            NoiseModel::Conditional => {
                let mut net = DenseNet::mlp(&sizes, config.activation, Activation::Identity)?;
                net.init_uniform(rng);
                net.scale_output_layer(1e-2);
                net.output_bias_mut().iter_mut().for_each(|b| *b = LOG_SCALE_INIT);
                ScaleModel::Conditional(net)
            }
            NoiseModel::Average => ScaleModel::Average(alloc::vec![LOG_SCALE_INIT; config.action_dim]),
        };
        let flows = FlowChain::initial(config.action_dim, config.flow_family, config.flow_count, rng);
        Ok(Self { mean, scale, flows })
    }

    pub fn from_parts(mean: DenseNet, scale: ScaleModel, flows: FlowChain) -> Result<Self, PolicyError> {
        let d = mean.output_dim();
        match &scale {
            ScaleModel::Conditional(net) => {
                if net.input_dim() != mean.input_dim() || net.output_dim() != d {
                    return Err(DiffError::DimensionMismatch { expected: d, found: net.output_dim() }.into());
                }
            }
            ScaleModel::Average(v) => {
                if v.len() != d {
                    return Err(DiffError::DimensionMismatch { expected: d, found: v.len() }.into());
                }
            }
        }
        if flows.dim() != d {
            return Err(FlowError::DimensionMismatch { expected: d, found: flows.dim() }.into());
        }
        Ok(Self { mean, scale, flows })
    }

    pub fn obs_dim(&self) -> usize {
        self.mean.input_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.mean.output_dim()
    }

    pub fn mean_net(&self) -> &DenseNet {
        &self.mean
    }

    pub fn mean_net_mut(&mut self) -> &mut DenseNet {
        &mut self.mean
    }

    pub fn scale(&self) -> &ScaleModel {
        &self.scale
    }

    pub fn scale_mut(&mut self) -> &mut ScaleModel {
        &mut self.scale
    }

    pub fn flows(&self) -> &FlowChain {
        &self.flows
    }

    pub fn flows_mut(&mut self) -> &mut FlowChain {
        &mut self.flows
    }

    pub fn params(&self) -> PolicyParams<'_, f64> {
        PolicyParams { mean: self.mean.params(), scale: self.scale.params(), flows: self.flows.params() }
    }

    /// Learnable scalars in the base policy and the flows.
    pub fn count_params(&self) -> usize {
        self.mean.param_count() + self.scale.params().len() + self.flows.param_count()
    }

    /// Clamped log-scales at `state`.
    pub fn log_scales<T: Real>(&self, params: PolicyParams<'_, T>, state: &[T]) -> Result<Vec<T>, PolicyError> {
        let raw = match &self.scale {
            ScaleModel::Conditional(net) => net.forward(params.scale, state)?,
            ScaleModel::Average(_) => params.scale.to_vec(),
        };
        if raw.iter().any(|x| !x.value().is_finite()) {
            return Err(PolicyError::NonFinite { head: "scale" });
        }
        Ok(raw.into_iter().map(|l| l.clamp(LOG_SCALE_MIN, LOG_SCALE_MAX)).collect())
    }

    fn mean_at<T: Real>(&self, params: PolicyParams<'_, T>, state: &[T]) -> Result<Vec<T>, PolicyError> {
        let mu = self.mean.forward(params.mean, state)?;
        if mu.iter().any(|x| !x.value().is_finite()) {
            return Err(PolicyError::NonFinite { head: "mean" });
        }
        Ok(mu)
    }

    /// Push given base noise through the policy with explicit parameters.
    pub fn sample_with<T: Real>(
        &self,
        params: PolicyParams<'_, T>,
        state: &[T],
        noise: &[f64],
    ) -> Result<PathSample<T>, PolicyError> {
        if noise.len() != self.action_dim() {
            return Err(PolicyError::NoiseDimension { expected: self.action_dim(), found: noise.len() });
        }
        let mu = self.mean_at(params, state)?;
        let log_sigma = self.log_scales(params, state)?;
        let pre_flow: Vec<T> = log_sigma
            .iter()
            .zip(noise)
            .zip(&mu)
            .map(|((&l, &e), &m)| l.exp() * e + m)
            .collect();
        let base = -T::sum(&log_sigma) + standard_normal_log_density(noise);
        let (action, log_det) = self.flows.apply(params.flows, &pre_flow)?;
        let log_prob = match log_det {
            Some(ld) => base - ld,
            None => base,
        };
        if !log_prob.value().is_finite() || action.iter().any(|a| !a.value().is_finite()) {
            return Err(PolicyError::NonFinite { head: "flow" });
        }
        Ok(PathSample { action, log_prob, pre_flow })
    }

    /// Stochastic action at `state`.
    pub fn sample<R: Rng + ?Sized>(&self, state: &[f64], rng: &mut R) -> Result<ActionSample, PolicyError> {
        let mut noise = alloc::vec![0.0; self.action_dim()];
        crate::rng::fill_normal(rng, &mut noise);
        self.sample_noise(state, &noise)
    }

    /// Action for fixed base noise.
    pub fn sample_noise(&self, state: &[f64], noise: &[f64]) -> Result<ActionSample, PolicyError> {
        let path = self.sample_with(self.params(), state, noise)?;
        Ok(ActionSample {
            action: path.action,
            log_prob: path.log_prob,
            noise: noise.to_vec(),
            pre_flow: path.pre_flow,
        })
    }

    /// `chain(μ(s))`: the action for zero noise.
    pub fn deterministic_action(&self, state: &[f64]) -> Result<Vec<f64>, PolicyError> {
        let mu = self.mean_at(self.params(), state)?;
        let (action, _) = self.flows.eval(&mu)?;
        if action.iter().any(|a| !a.is_finite()) {
            return Err(PolicyError::NonFinite { head: "flow" });
        }
        Ok(action)
    }
}
