//! Reference Gaussian soft actor-critic shared by the test suites.

use rand::Rng;
use sacnf_core::policy::{ScaleModel, LOG_SCALE_MAX, LOG_SCALE_MIN};
use sacnf_core::rng::fill_normal;
use sacnf_core::sac::{Agent, Transition};
use sacnf_core::{AdamConfig, AdamState, DenseNet, LearnConfig, Real, Tape};

/// Plain Gaussian soft actor-critic, written against the network and tape
/// primitives only: `a = μ(s) + σ(s)·ε`, `log π = −Σ log σ + log N(ε)`.
pub struct GaussianSac {
    pub mean: DenseNet,
    pub log_scale: DenseNet,
    pub q: DenseNet,
    pub v: DenseNet,
    pub v_target: DenseNet,
    adam: [AdamState; 4],
    cfg: LearnConfig,
}

fn gaussian_log_density(eps: &[f64]) -> f64 {
    let mut acc = 0.0;
    for &e in eps {
        acc -= 0.5 * e * e;
    }
    acc - 0.5 * eps.len() as f64 * 1.837_877_066_409_345_5 // ln 2π
}

fn average<T: Real>(terms: &[T]) -> T {
    T::sum(terms) / terms.len() as f64
}

impl GaussianSac {
    pub fn from_agent(agent: &Agent, cfg: LearnConfig) -> Self {
        let log_scale = match agent.policy.scale() {
            ScaleModel::Conditional(net) => net.clone(),
            ScaleModel::Average(_) => unreachable!("reference uses a state-conditional scale"),
        };
        let c = &agent.critics;
        let adam = |n: usize, lr: f64| AdamState::new(n, AdamConfig::with_lr(lr));
        Self {
            adam: [
                adam(c.v.param_count(), cfg.lr_v),
                adam(c.q.param_count(), cfg.lr_q),
                adam(agent.policy.mean_net().param_count(), cfg.lr_theta),
                adam(log_scale.param_count(), cfg.lr_theta),
            ],
            mean: agent.policy.mean_net().clone(),
            log_scale,
            q: c.q.clone(),
            v: c.v.clone(),
            v_target: c.v_target.clone(),
            cfg,
        }
    }

    fn act<T: Real>(&self, mp: &[T], sp: &[T], s: &[T], eps: &[f64]) -> (Vec<T>, T) {
        let mu = self.mean.forward(mp, s).unwrap();
        let ls: Vec<T> =
            self.log_scale.forward(sp, s).unwrap().into_iter().map(|l| l.clamp(LOG_SCALE_MIN, LOG_SCALE_MAX)).collect();
        let a = ls.iter().zip(eps).zip(&mu).map(|((&l, &e), &m)| l.exp() * e + m).collect();
        (a, -T::sum(&ls) + gaussian_log_density(eps))
    }

    /// One learning step; returns the value, critic and policy losses.
    pub fn step<R: Rng>(&mut self, batch: &[&Transition], rng: &mut R) -> [f64; 3] {
        let alpha = self.cfg.alpha;
        let mut eps = vec![0.0; self.mean.output_dim()];

        let tape = Tape::new();
        let vp = tape.vars(self.v.params());
        let mut terms = Vec::new();
        for t in batch {
            fill_normal(rng, &mut eps);
            let (a, lp) = self.act(self.mean.params(), self.log_scale.params(), &t.state, &eps);
            let target = self.q.eval(&[t.state.clone(), a].concat()).unwrap()[0] - alpha * lp;
            let s: Vec<_> = t.state.iter().map(|&x| tape.constant(x)).collect();
            terms.push((self.v.forward(&vp, &s).unwrap()[0] - target).square() * 0.5);
        }
        let loss = average(&terms);
        let g = tape.backward(loss).unwrap().wrt_all(&vp);
        let v_loss = loss.value();
        self.adam[0].step(self.v.params_mut(), &g).unwrap();

        let tape = Tape::new();
        let qp = tape.vars(self.q.params());
        let mut terms = Vec::new();
        for t in batch {
            let boot = if t.done { 0.0 } else { self.cfg.gamma * self.v_target.eval(&t.next_state).unwrap()[0] };
            let x: Vec<_> = [&t.state[..], &t.action[..]].concat().iter().map(|&x| tape.constant(x)).collect();
            terms.push((self.q.forward(&qp, &x).unwrap()[0] - (t.reward + boot)).square() * 0.5);
        }
        let loss = average(&terms);
        let g = tape.backward(loss).unwrap().wrt_all(&qp);
        let q_loss = loss.value();
        self.adam[1].step(self.q.params_mut(), &g).unwrap();

        let tape = Tape::new();
        let mp = tape.vars(self.mean.params());
        let sp = tape.vars(self.log_scale.params());
        let mut terms = Vec::new();
        for t in batch {
            fill_normal(rng, &mut eps);
            let s: Vec<_> = t.state.iter().map(|&x| tape.constant(x)).collect();
            let (a, lp) = self.act(&mp, &sp, &s, &eps);
            let q = self.q.forward_frozen(&[s, a].concat()).unwrap()[0];
            terms.push(lp * alpha - q);
        }
        let loss = average(&terms);
        let grads = tape.backward(loss).unwrap();
        let pi_loss = loss.value();
        self.adam[2].step(self.mean.params_mut(), &grads.wrt_all(&mp)).unwrap();
        self.adam[3].step(self.log_scale.params_mut(), &grads.wrt_all(&sp)).unwrap();

        let tau = self.cfg.tau;
        for (t, &o) in self.v_target.params_mut().iter_mut().zip(self.v.params()) {
            *t = (1.0 - tau) * *t + tau * o;
        }
        [v_loss, q_loss, pi_loss]
    }
}
