use rand::Rng;
use sacnf_core::diff::check::{central_gradient, max_relative_error, FD_STEP};
use sacnf_core::policy::PolicyParams;
use sacnf_core::rng::normal;
use sacnf_core::sac::{pi_loss, q_loss, v_loss, Agent, Architecture, Transition};
use sacnf_core::{Activation, DenseNet, FlowFamily, NoiseModel, Real, Stream, Streams, Tape};

/// Floor of the relative-error denominator: derivatives below it are compared
/// absolutely, where central differences are dominated by round-off.
const FLOOR: f64 = 1e-6;
const TOL: f64 = 1e-4;

fn random_vec<R: Rng>(n: usize, scale: f64, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| scale * normal(rng)).collect()
}

#[test]
fn random_networks_match_finite_differences() {
    let mut rng = Streams::new(1).stream(Stream::Analysis);
    let acts = [Activation::Tanh, Activation::Relu, Activation::Identity];
    for case in 0..100 {
        let depth = 1 + case % 3;
        let mut sizes = vec![1 + rng.random_range(0..4)];
        for _ in 0..depth {
            sizes.push(1 + rng.random_range(0..5));
        }
        let mut net = DenseNet::mlp(&sizes, acts[case % 3], acts[(case / 3) % 3]).unwrap();
        net.init_uniform(&mut rng);
        let input = random_vec(sizes[0], 1.0, &mut rng);
        let weights = random_vec(*sizes.last().unwrap(), 1.0, &mut rng);
        let objective = |p: &[f64]| -> f64 {
            let out = net.forward(p, &input).unwrap();
            out.iter().zip(&weights).map(|(o, w)| o * w).sum()
        };
        let tape = Tape::new();
        let params = tape.vars(net.params());
        let x: Vec<_> = input.iter().map(|&v| tape.constant(v)).collect();
        let out = net.forward(&params, &x).unwrap();
        let terms: Vec<_> = out.iter().zip(&weights).map(|(&o, &w)| o * w).collect();
        let y = Real::sum(&terms);
        let analytic = tape.backward(y).unwrap().wrt_all(&params);
        let numeric = central_gradient(objective, net.params(), FD_STEP);
        let err = max_relative_error(&analytic, &numeric, FLOOR);
        assert!(err < TOL, "case {case} sizes {sizes:?}: relative error {err}");
    }
}

#[test]
fn shared_subexpressions_accumulate() {
    // u = x·w feeds three terms of y
    let tape = Tape::new();
    let x = tape.var(1.5);
    let w = tape.var(-2.0);
    let u = x * w;
    let y = u * u + u * 3.0 + u.exp();
    let g = tape.backward(y).unwrap();
    // tree-expanded oracle: dy/du = 2u + 3 + e^u
    let u_val = 1.5 * -2.0;
    let dy_du = 2.0 * u_val + 3.0 + f64::exp(u_val);
    assert!((g.wrt(x) - dy_du * -2.0).abs() < 1e-12);
    assert!((g.wrt(w) - dy_du * 1.5).abs() < 1e-12);
}

fn agent(flows: usize, family: FlowFamily, twin: bool, seed: u64) -> Agent {
    let arch = Architecture {
        policy_hidden: vec![6],
        policy_activation: Activation::Tanh,
        noise: NoiseModel::Conditional,
        flow_family: family,
        flow_count: flows,
        critic_hidden: vec![7, 5],
        critic_activation: Activation::Tanh,
        twin_q: twin,
    };
    let mut a = Agent::new(&arch, 2, 2, &mut Streams::new(seed).stream(Stream::Init)).unwrap();
    // move the flows away from their identity initialization
    let mut rng = Streams::new(seed).stream(Stream::Analysis);
    a.policy.flows_mut().params_mut().iter_mut().for_each(|p| *p += 0.5 * normal(&mut rng));
    a
}

fn batch(seed: u64, m: usize) -> Vec<Transition> {
    let mut rng = Streams::new(seed).stream(Stream::Replay);
    (0..m)
        .map(|i| Transition {
            state: random_vec(2, 0.5, &mut rng),
            action: random_vec(2, 0.7, &mut rng),
            reward: normal(&mut rng),
            next_state: random_vec(2, 0.5, &mut rng),
            done: i % 5 == 0,
        })
        .collect()
}

#[test]
fn losses_match_finite_differences_through_flows() {
    for case in 0..6u64 {
        let family = if case % 2 == 0 { FlowFamily::Radial } else { FlowFamily::Planar };
        let a = agent(3, family, case % 3 == 0, 100 + case);
        let data = batch(200 + case, 8);
        let refs: Vec<&Transition> = data.iter().collect();
        let c = &a.critics;

        // critic
        let tape = Tape::new();
        let p = tape.vars(c.q.params());
        let g = tape.backward(q_loss(&refs, &c.q, &p, &c.v_target, 0.99).unwrap()).unwrap().wrt_all(&p);
        let fd = central_gradient(|x| q_loss(&refs, &c.q, x, &c.v_target, 0.99).unwrap(), c.q.params(), FD_STEP);
        assert!(max_relative_error(&g, &fd, FLOOR) < TOL, "q case {case}");

        // value, with the same policy noise for every evaluation
        let rng = Streams::new(case).stream(Stream::Learner);
        let tape = Tape::new();
        let p = tape.vars(c.v.params());
        let loss = v_loss(&refs, &a.policy, c, &p, 0.05, None, &mut rng.clone()).unwrap();
        let g = tape.backward(loss).unwrap().wrt_all(&p);
        let fd = central_gradient(
            |x| v_loss(&refs, &a.policy, c, x, 0.05, None, &mut rng.clone()).unwrap(),
            c.v.params(),
            FD_STEP,
        );
        assert!(max_relative_error(&g, &fd, FLOOR) < TOL, "v case {case}");

        // policy, over mean, scale and flow parameters jointly
        let pp = a.policy.params();
        let flat: Vec<f64> = [pp.mean, pp.scale, pp.flows].concat();
        let (nm, ns) = (pp.mean.len(), pp.scale.len());
        let split = |x: &[f64]| -> (Vec<f64>, Vec<f64>, Vec<f64>) {
            (x[..nm].to_vec(), x[nm..nm + ns].to_vec(), x[nm + ns..].to_vec())
        };
        let tape = Tape::new();
        let vars = tape.vars(&flat);
        let params = PolicyParams { mean: &vars[..nm], scale: &vars[nm..nm + ns], flows: &vars[nm + ns..] };
        let loss = pi_loss(&refs, &a.policy, params, c, 0.05, None, &mut rng.clone()).unwrap().loss;
        let g = tape.backward(loss).unwrap().wrt_all(&vars);
        let fd = central_gradient(
            |x| {
                let (m, s, f) = split(x);
                let params = PolicyParams { mean: &m, scale: &s, flows: &f };
                pi_loss(&refs, &a.policy, params, c, 0.05, None, &mut rng.clone()).unwrap().loss
            },
            &flat,
            FD_STEP,
        );
        let err = max_relative_error(&g, &fd, FLOOR);
        assert!(err < TOL, "pi case {case}: {err}");
    }
}

#[test]
fn critic_loss_ignores_policy_and_target() {
    let a = agent(2, FlowFamily::Radial, false, 9);
    let data = batch(10, 6);
    let refs: Vec<&Transition> = data.iter().collect();
    let c = &a.critics;
    let tape = Tape::new();
    let target_leaves = tape.vars(c.v_target.params());
    let pp = a.policy.params();
    let policy_leaves = tape.vars(&[pp.mean, pp.scale, pp.flows].concat());
    let p = tape.vars(c.q.params());
    let g = tape.backward(q_loss(&refs, &c.q, &p, &c.v_target, 0.99).unwrap()).unwrap();
    assert!(g.wrt_all(&target_leaves).iter().all(|&x| x == 0.0));
    assert!(g.wrt_all(&policy_leaves).iter().all(|&x| x == 0.0));
    assert!(g.wrt_all(&p).iter().any(|&x| x != 0.0));
}

#[test]
fn policy_loss_has_no_critic_gradient() {
    let a = agent(2, FlowFamily::Planar, false, 4);
    let data = batch(5, 6);
    let refs: Vec<&Transition> = data.iter().collect();
    // critic weights enter the policy loss as constants, so critic leaves on
    // the same tape receive no gradient
    let tape = Tape::new();
    let critic_leaves = tape.vars(a.critics.q.params());
    let pp = a.policy.params();
    let mean = tape.vars(pp.mean);
    let scale = tape.vars(pp.scale);
    let flows = tape.vars(pp.flows);
    let params = PolicyParams { mean: &mean, scale: &scale, flows: &flows };
    let rng = Streams::new(6).stream(Stream::Learner);
    let loss = pi_loss(&refs, &a.policy, params, &a.critics, 0.05, None, &mut rng.clone()).unwrap();
    let g = tape.backward(loss.loss).unwrap();
    assert!(g.wrt_all(&critic_leaves).iter().all(|&x| x == 0.0));
    assert!(g.wrt_all(&mean).iter().any(|&x| x != 0.0));
    assert!(g.wrt_all(&flows).iter().any(|&x| x != 0.0));
}
