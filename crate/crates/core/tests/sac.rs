use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use sacnf_core::rng::normal;
use sacnf_core::sac::{Agent, Architecture, ReplayBuffer, Transition, UpdatePhase};
use sacnf_core::{Activation, FlowFamily, LearnConfig, Learner, NoiseModel, Stream, Streams};

#[path = "common/gaussian_sac.rs"]
mod gaussian_sac;
use gaussian_sac::GaussianSac;

const OBS: usize = 2;
const ACT: usize = 2;

fn arch(flows: usize, twin: bool) -> Architecture {
    Architecture {
        policy_hidden: vec![16, 16],
        policy_activation: Activation::Tanh,
        noise: NoiseModel::Conditional,
        flow_family: FlowFamily::Radial,
        flow_count: flows,
        critic_hidden: vec![16, 16],
        critic_activation: Activation::Relu,
        twin_q: twin,
    }
}

fn buffer(seed: u64, n: usize) -> ReplayBuffer {
    let mut rng = Streams::new(seed).stream(Stream::Rollout);
    let mut buf = ReplayBuffer::new(n, OBS, ACT);
    for i in 0..n {
        let mut v = |s: f64| (0..2).map(|_| s * normal(&mut rng)).collect::<Vec<f64>>();
        let t = Transition { state: v(0.5), action: v(0.8), reward: 0.0, next_state: v(0.5), done: i % 17 == 0 };
        let reward = -t.state[0].abs() + 0.1 * t.action[1];
        buf.push(Transition { reward, ..t }).unwrap();
    }
    buf
}

#[test]
fn without_flows_the_learner_is_gaussian_sac() {
    let agent = Agent::new(&arch(0, false), OBS, ACT, &mut Streams::new(3).stream(Stream::Init)).unwrap();
    let cfg = LearnConfig::default();
    let mut reference = GaussianSac::from_agent(&agent, cfg);
    let mut learner = Learner::new(agent, cfg);
    let data = buffer(4, 500);
    let streams = Streams::new(5);
    let mut replay = streams.stream(Stream::Replay);
    let mut rng_a = streams.stream(Stream::Learner);
    let mut rng_b = rng_a.clone();
    for step in 0..1000 {
        let batch = data.sample(32, &mut replay).unwrap();
        let ours = learner.learn_step(&batch, &mut rng_a).unwrap();
        let theirs = reference.step(&batch, &mut rng_b);
        assert_eq!(ours.pi_flow, None);
        let got = [ours.v, ours.q, ours.pi];
        assert!(
            got.iter().zip(&theirs).all(|(a, b)| a.to_bits() == b.to_bits()),
            "step {step}: {got:?} vs {theirs:?}"
        );
    }
    let a = &learner.agent;
    assert_eq!(a.policy.mean_net().params(), reference.mean.params());
    assert_eq!(a.policy.scale().params(), reference.log_scale.params());
    assert_eq!(a.critics.v_target.params(), reference.v_target.params());
}

fn digest(xs: &[f64]) -> u64 {
    let mut h = DefaultHasher::new();
    xs.iter().for_each(|x| x.to_bits().hash(&mut h));
    h.finish()
}

/// Digests of `[ν, ω, θ, φ, ν̄]`.
fn groups(a: &Agent) -> [u64; 5] {
    let c = &a.critics;
    let mut q = c.q.params().to_vec();
    if let Some(q2) = &c.q2 {
        q.extend_from_slice(q2.params());
    }
    let p = a.policy.params();
    [digest(c.v.params()), digest(&q), digest(&[p.mean, p.scale].concat()), digest(p.flows), digest(c.v_target.params())]
}

#[test]
fn each_group_changes_only_in_its_own_phase() {
    for (flows, twin) in [(3, false), (2, true), (0, false)] {
        let agent = Agent::new(&arch(flows, twin), OBS, ACT, &mut Streams::new(8).stream(Stream::Init)).unwrap();
        let mut learner = Learner::new(agent, LearnConfig::default());
        let data = buffer(9, 200);
        let streams = Streams::new(10);
        let mut replay = streams.stream(Stream::Replay);
        let mut rng = streams.stream(Stream::Learner);
        for _ in 0..5 {
            let batch = data.sample(16, &mut replay).unwrap();
            let mut before = groups(&learner.agent);
            let mut seen = Vec::new();
            learner
                .learn_step_observed(&batch, &mut rng, &mut |phase, agent| {
                    let after = groups(agent);
                    let owner = match phase {
                        UpdatePhase::Value => 0,
                        UpdatePhase::Critic => 1,
                        UpdatePhase::BasePolicy => 2,
                        UpdatePhase::Flows => 3,
                        UpdatePhase::Target => 4,
                    };
                    for g in 0..5 {
                        let changed = before[g] != after[g];
                        assert_eq!(changed, g == owner, "{phase:?} touched group {g} (flows {flows}, twin {twin})");
                    }
                    before = after;
                    seen.push(phase);
                })
                .unwrap();
            let mut expected = vec![UpdatePhase::Value, UpdatePhase::Critic, UpdatePhase::BasePolicy];
            if flows > 0 {
                expected.push(UpdatePhase::Flows);
            }
            expected.push(UpdatePhase::Target);
            assert_eq!(seen, expected);
        }
    }
}

#[test]
fn identical_seeds_learn_identically() {
    let run = || {
        let agent = Agent::new(&arch(2, true), OBS, ACT, &mut Streams::new(21).stream(Stream::Init)).unwrap();
        let mut learner = Learner::new(agent, LearnConfig { action_bound: Some(1.0), ..LearnConfig::default() });
        let data = buffer(22, 300);
        let streams = Streams::new(23);
        let mut replay = streams.stream(Stream::Replay);
        let mut rng = streams.stream(Stream::Learner);
        for _ in 0..50 {
            let batch = data.sample(32, &mut replay).unwrap();
            learner.learn_step(&batch, &mut rng).unwrap();
        }
        learner.into_agent()
    };
    assert_eq!(run(), run());
}
