use alloc::vec::Vec;

use rand::Rng;

use super::{Agent, Architecture, LearnConfig, Learner, Losses, ReplayBuffer, SacError, Transition};
use crate::env::Environment;
use crate::math;
use crate::policy::NfPolicy;
use crate::rng::{Stream, StreamRng, Streams};

/// Everything needed to reproduce one seeded training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub arch: Architecture,
    pub learn: LearnConfig,
    /// Environment steps to run.
    pub total_steps: usize,
    /// Leading environment steps that use uniform random actions and no learning.
    pub warmup_steps: usize,
    /// Learning steps per environment step once warmup is over.
    pub updates_per_step: usize,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    /// Evaluate every this many environment steps; 0 disables evaluation.
    pub eval_every: usize,
    pub eval_episodes: usize,
    /// Offer a checkpoint every this many environment steps; 0 disables.
    pub checkpoint_every: usize,
    /// A loss beyond this magnitude (or non-finite) aborts the run.
    pub divergence_limit: f64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), SacError> {
        if self.batch_size == 0 {
            return Err(SacError::Config("batch_size must be positive"));
        }
        if self.buffer_capacity < self.batch_size {
            return Err(SacError::Config("buffer_capacity must be at least batch_size"));
        }
        if self.eval_every > 0 && self.eval_episodes == 0 {
            return Err(SacError::Config("eval_episodes must be positive when evaluating"));
        }
        if !(self.learn.gamma >= 0.0 && self.learn.gamma <= 1.0) {
            return Err(SacError::Config("gamma must lie in [0, 1]"));
        }
        if !(self.learn.tau >= 0.0 && self.learn.tau <= 1.0) {
            return Err(SacError::Config("tau must lie in [0, 1]"));
        }
        if !(self.learn.alpha >= 0.0 && self.learn.alpha.is_finite()) {
            return Err(SacError::Config("alpha must be finite and non-negative"));
        }
        if !(self.divergence_limit > 0.0) {
            return Err(SacError::Config("divergence_limit must be positive"));
        }
        Ok(())
    }
}

/// One metrics row. Episode rows carry the training return and the mean
/// losses since the previous row; evaluation rows carry the evaluation
/// statistics. Absent quantities are `None`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LogRow {
    pub env_step: usize,
    pub episode: usize,
    pub train_return: Option<f64>,
    pub eval_return_mean: Option<f64>,
    pub eval_return_std: Option<f64>,
    pub loss_q: Option<f64>,
    pub loss_v: Option<f64>,
    pub loss_pi: Option<f64>,
    pub policy_entropy_mc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingLog {
    pub rows: Vec<LogRow>,
}

impl TrainingLog {
    pub fn eval_rows(&self) -> impl DoubleEndedIterator<Item = &LogRow> {
        self.rows.iter().filter(|r| r.eval_return_mean.is_some())
    }

    pub fn episode_rows(&self) -> impl DoubleEndedIterator<Item = &LogRow> {
        self.rows.iter().filter(|r| r.train_return.is_some())
    }
}

/// One episode of positions (starting with the reset state) and rewards.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub positions: Vec<[f64; 2]>,
    pub rewards: Vec<f64>,
    /// The episode ended by task termination rather than the horizon.
    pub terminal: bool,
}

impl Trajectory {
    pub fn total_return(&self) -> f64 {
        self.rewards.iter().sum()
    }

    pub fn final_position(&self) -> [f64; 2] {
        *self.positions.last().expect("trajectories start with the reset position")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub returns: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation of `returns`.
    pub std: f64,
    pub trajectories: Vec<Trajectory>,
}

/// Hooks into a running [`train`] call. All methods default to no-ops.
pub trait TrainObserver {
    fn on_learn_step(&mut self, _env_step: usize, _losses: &Losses) {}
    fn on_row(&mut self, _row: &LogRow) {}
    fn on_eval(&mut self, _env_step: usize, _report: &EvalReport) {}
    fn on_checkpoint(&mut self, _env_step: usize, _agent: &Agent) {}
    /// Checked after every environment step; `true` ends training early,
    /// as if the step budget had been reached.
    fn should_stop(&mut self, _env_step: usize) -> bool {
        false
    }
}

impl TrainObserver for () {}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub agent: Agent,
    pub log: TrainingLog,
    pub env_steps: usize,
    pub learn_steps: usize,
}

/// A run that aborted, with the state it had reached.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainFailure {
    pub error: SacError,
    pub log: TrainingLog,
    pub agent: Agent,
    pub env_step: usize,
}

fn episode<E: Environment, F>(env: &E, mut act: F) -> Result<Trajectory, SacError>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>, SacError>,
{
    let mut state = env.reset();
    let mut positions = Vec::with_capacity(env.horizon() + 1);
    let mut rewards = Vec::with_capacity(env.horizon());
    positions.push(env.position(&state));
    loop {
        let action = act(&env.observe(&state))?;
        let res = env.step(&state, &action)?;
        state = res.state;
        positions.push(env.position(&state));
        rewards.push(res.reward);
        if res.done {
            return Ok(Trajectory { positions, rewards, terminal: res.terminal });
        }
    }
}

/// Run `episodes` episodes with the deterministic action `chain(μ(s))`.
pub fn evaluate<E: Environment>(policy: &NfPolicy, env: &E, episodes: usize) -> Result<EvalReport, SacError> {
    let mut trajectories = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        trajectories.push(episode(env, |obs| Ok(policy.deterministic_action(obs)?))?);
    }
    let returns: Vec<f64> = trajectories.iter().map(Trajectory::total_return).collect();
    let (mean, std) = mean_std(&returns);
    Ok(EvalReport { returns, mean, std, trajectories })
}

/// Run `episodes` episodes with stochastic policy actions.
pub fn rollout<E: Environment, R: Rng + ?Sized>(
    policy: &NfPolicy,
    env: &E,
    episodes: usize,
    rng: &mut R,
) -> Result<Vec<Trajectory>, SacError> {
    (0..episodes).map(|_| episode(env, |obs| Ok(policy.sample(obs, rng)?.action))).collect()
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, math::sqrt(var))
}

#[derive(Default)]
struct LossAccumulator {
    q: f64,
    v: f64,
    pi: f64,
    entropy: f64,
    count: usize,
}

impl LossAccumulator {
    fn add(&mut self, l: &Losses) {
        self.q += l.q;
        self.v += l.v;
        self.pi += l.pi;
        self.entropy += l.entropy;
        self.count += 1;
    }

    fn drain_into(&mut self, row: &mut LogRow) {
        if self.count > 0 {
            let n = self.count as f64;
            row.loss_q = Some(self.q / n);
            row.loss_v = Some(self.v / n);
            row.loss_pi = Some(self.pi / n);
            row.policy_entropy_mc = Some(self.entropy / n);
        }
        *self = Self::default();
    }
}

struct Run<'a, E: Environment> {
    config: &'a TrainConfig,
    env: &'a E,
    learner: Learner,
    log: TrainingLog,
    env_step: usize,
    rollout_rng: StreamRng,
    replay_rng: StreamRng,
    learner_rng: StreamRng,
}

impl<E: Environment> Run<'_, E> {
    fn run(&mut self, observer: &mut dyn TrainObserver) -> Result<(), SacError> {
        let config = self.config;
        let env = self.env;
        let action_dim = env.action_dim();
        let mut buffer = ReplayBuffer::new(config.buffer_capacity, env.obs_dim(), action_dim);
        let mut losses = LossAccumulator::default();
        let mut state = env.reset();
        let mut episode_index = 0;
        let mut episode_return = 0.0;

        while self.env_step < config.total_steps {
            self.env_step += 1;
            let step = self.env_step;
            let obs = env.observe(&state);
            let action: Vec<f64> = if step <= config.warmup_steps {
                (0..action_dim).map(|_| self.rollout_rng.random_range(-1.0..=1.0)).collect()
            } else {
                self.learner.agent.policy.sample(&obs, &mut self.rollout_rng)?.action
            };
            let res = env.step(&state, &action)?;
            let next_obs = env.observe(&res.state);
            buffer.push(Transition {
                state: obs,
                action: super::clip_action(action, config.learn.action_bound),
                reward: res.reward,
                next_state: next_obs,
                done: res.terminal,
            })?;
            episode_return += res.reward;
            state = res.state;

            if step > config.warmup_steps && buffer.len() >= config.batch_size {
                for _ in 0..config.updates_per_step {
                    let batch = buffer.sample(config.batch_size, &mut self.replay_rng)?;
                    let l = self.learner.learn_step(&batch, &mut self.learner_rng)?;
                    if let Some((name, value)) = l.diverged(config.divergence_limit) {
                        return Err(SacError::Diverged { name, value, step: self.learner.steps() });
                    }
                    losses.add(&l);
                    observer.on_learn_step(step, &l);
                }
            }

            if res.done {
                let mut row = LogRow {
                    env_step: step,
                    episode: episode_index,
                    train_return: Some(episode_return),
                    ..LogRow::default()
                };
                losses.drain_into(&mut row);
                observer.on_row(&row);
                self.log.rows.push(row);
                episode_index += 1;
                episode_return = 0.0;
                state = env.reset();
            }

            if config.eval_every > 0 && step.is_multiple_of(config.eval_every) {
                let report = evaluate(&self.learner.agent.policy, env, config.eval_episodes)?;
                let row = LogRow {
                    env_step: step,
                    episode: episode_index,
                    eval_return_mean: Some(report.mean),
                    eval_return_std: Some(report.std),
                    ..LogRow::default()
                };
                observer.on_row(&row);
                observer.on_eval(step, &report);
                self.log.rows.push(row);
            }

            if config.checkpoint_every > 0 && step.is_multiple_of(config.checkpoint_every) {
                observer.on_checkpoint(step, &self.learner.agent);
            }
            if observer.should_stop(step) {
                break;
            }
        }
        Ok(())
    }
}

/// Train a fresh agent on `env` with the streams derived from one seed.
///
/// Each environment step stores one transition; after warmup it is followed
/// by `updates_per_step` learning steps on uniform minibatches. Stored
/// transitions are marked `done` only on task termination, so episodes cut by
/// the horizon still bootstrap.
pub fn train<E: Environment>(
    config: &TrainConfig,
    env: &E,
    streams: Streams,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome, TrainFailure> {
    let mut init = streams.stream(Stream::Init);
    let fail_early = |error: SacError, agent: Option<Agent>| -> TrainFailure {
        let agent = agent.unwrap_or_else(|| {
            // Shapes are invalid only if the architecture is; fall back to the
            // smallest valid agent so the failure still carries a value.
            let mut arch = config.arch.clone();
            arch.flow_count = 0;
            arch.policy_hidden.clear();
            arch.critic_hidden.clear();
            Agent::new(&arch, env.obs_dim(), env.action_dim(), &mut streams.stream(Stream::Init))
                .expect("minimal architecture is valid")
        });
        TrainFailure { error, log: TrainingLog::default(), agent, env_step: 0 }
    };
    let agent = match Agent::new(&config.arch, env.obs_dim(), env.action_dim(), &mut init) {
        Ok(a) => a,
        Err(e) => return Err(fail_early(e, None)),
    };
    if let Err(e) = config.validate() {
        return Err(fail_early(e, Some(agent)));
    }
    let mut run = Run {
        config,
        env,
        learner: Learner::new(agent, config.learn),
        log: TrainingLog::default(),
        env_step: 0,
        rollout_rng: streams.stream(Stream::Rollout),
        replay_rng: streams.stream(Stream::Replay),
        learner_rng: streams.stream(Stream::Learner),
    };
    match run.run(observer) {
        Ok(()) => Ok(TrainOutcome {
            learn_steps: run.learner.steps(),
            agent: run.learner.into_agent(),
            log: run.log,
            env_steps: run.env_step,
        }),
        Err(error) => Err(TrainFailure {
            error,
            env_step: run.env_step,
            agent: run.learner.into_agent(),
            log: run.log,
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::Activation;
    use crate::env::{EnvKind, PointEnv};
    use crate::flows::FlowFamily;
    use crate::policy::NoiseModel;
    use alloc::vec;

    fn config(total: usize) -> TrainConfig {
        TrainConfig {
            arch: Architecture {
                policy_hidden: vec![8],
                policy_activation: Activation::Tanh,
                noise: NoiseModel::Conditional,
                flow_family: FlowFamily::Radial,
                flow_count: 2,
                critic_hidden: vec![16],
                critic_activation: Activation::Relu,
                twin_q: false,
            },
            learn: LearnConfig::default(),
            total_steps: total,
            warmup_steps: 40,
            updates_per_step: 1,
            batch_size: 16,
            buffer_capacity: 1000,
            eval_every: 50,
            eval_episodes: 2,
            checkpoint_every: 0,
            divergence_limit: 1e6,
        }
    }

    #[test]
    fn zero_steps_gives_empty_log_and_initial_agent() {
        let env = PointEnv::new(EnvKind::FourGoal);
        let out = train(&config(0), &env, Streams::new(3), &mut ()).unwrap();
        assert!(out.log.rows.is_empty());
        let fresh = Agent::new(&config(0).arch, 2, 2, &mut Streams::new(3).stream(Stream::Init)).unwrap();
        assert_eq!(out.agent, fresh);
        assert_eq!(out.learn_steps, 0);
    }

    #[test]
    fn runs_are_deterministic() {
        let env = PointEnv::new(EnvKind::FourGoal);
        let a = train(&config(120), &env, Streams::new(9), &mut ()).unwrap();
        let b = train(&config(120), &env, Streams::new(9), &mut ()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.learn_steps, 80);
        // 6 episodes of 20 steps and 2 evaluations
        assert_eq!(a.log.episode_rows().count(), 6);
        assert_eq!(a.log.eval_rows().count(), 2);
        let c = train(&config(120), &env, Streams::new(10), &mut ()).unwrap();
        assert_ne!(a.log, c.log);
    }

    #[test]
    fn invalid_config_is_reported() {
        let env = PointEnv::new(EnvKind::Sparse);
        let mut cfg = config(10);
        cfg.batch_size = 0;
        let err = train(&cfg, &env, Streams::new(1), &mut ()).unwrap_err();
        assert!(matches!(err.error, SacError::Config(_)));
    }

    #[test]
    fn divergence_aborts_with_state() {
        let env = PointEnv::new(EnvKind::Deceptive);
        let mut cfg = config(200);
        cfg.divergence_limit = 1e-9;
        let err = train(&cfg, &env, Streams::new(1), &mut ()).unwrap_err();
        assert!(matches!(err.error, SacError::Diverged { step: 1, .. }));
        assert_eq!(err.env_step, 41);
    }

    #[test]
    fn observer_sees_every_learning_step() {
        struct Count(usize, usize);
        impl TrainObserver for Count {
            fn on_learn_step(&mut self, _: usize, _: &Losses) {
                self.0 += 1;
            }
            fn on_checkpoint(&mut self, _: usize, _: &Agent) {
                self.1 += 1;
            }
        }
        let env = PointEnv::new(EnvKind::Sparse);
        let mut cfg = config(100);
        cfg.checkpoint_every = 25;
        let mut count = Count(0, 0);
        let out = train(&cfg, &env, Streams::new(2), &mut count).unwrap();
        assert_eq!(count.0, out.learn_steps);
        assert_eq!(count.1, 4);
    }

    #[test]
    fn observer_can_stop_early() {
        struct StopAfterEval(bool);
        impl TrainObserver for StopAfterEval {
            fn on_eval(&mut self, _: usize, _: &EvalReport) {
                self.0 = true;
            }
            fn should_stop(&mut self, _: usize) -> bool {
                self.0
            }
        }
        let env = PointEnv::new(EnvKind::FourGoal);
        let out = train(&config(500), &env, Streams::new(4), &mut StopAfterEval(false)).unwrap();
        assert_eq!(out.env_steps, 50);
        assert_eq!(out.log.eval_rows().count(), 1);
        // identical to a run whose budget ended there
        let full = train(&config(50), &env, Streams::new(4), &mut ()).unwrap();
        assert_eq!(out, full);
    }

    #[test]
    fn population_std() {
        assert_eq!(mean_std(&[1.0, 3.0]), (2.0, 1.0));
        assert_eq!(mean_std(&[]), (0.0, 0.0));
    }
}
