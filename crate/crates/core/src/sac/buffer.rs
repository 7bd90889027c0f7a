use alloc::vec::Vec;

use rand::Rng;

use super::SacError;

/// One environment transition `(s, a, r, s′, done)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    /// True only for task termination; time-limit cut-offs still bootstrap.
    pub done: bool,
}

/// Fixed-capacity FIFO store with uniform sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    obs_dim: usize,
    action_dim: usize,
    items: Vec<Transition>,
    // slot overwritten by the next push once full
    head: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, obs_dim: usize, action_dim: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            obs_dim,
            action_dim,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            head: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, t: Transition) -> Result<(), SacError> {
        for (expected, found) in [
            (self.obs_dim, t.state.len()),
            (self.action_dim, t.action.len()),
            (self.obs_dim, t.next_state.len()),
        ] {
            if expected != found {
                return Err(SacError::TransitionShape { expected, found });
            }
        }
        if !t.reward.is_finite() {
            return Err(SacError::NonFiniteReward);
        }
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.head] = t;
            self.head = (self.head + 1) % self.capacity;
        }
        Ok(())
    }

    /// Oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        let (newer, older) = self.items.split_at(self.head);
        older.iter().chain(newer)
    }

    /// `m` transitions drawn uniformly with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, m: usize, rng: &mut R) -> Result<Vec<&Transition>, SacError> {
        if self.items.len() < m || m == 0 {
            return Err(SacError::NotReady { have: self.items.len(), need: m });
        }
        let n = self.items.len();
        Ok((0..m).map(|_| &self.items[rng.random_range(0..n)]).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Stream, Streams};
    use alloc::vec;

    fn t(r: f64) -> Transition {
        Transition { state: vec![r, 0.0], action: vec![0.0], reward: r, next_state: vec![0.0, 0.0], done: false }
    }

    #[test]
    fn fifo_eviction() {
        let mut b = ReplayBuffer::new(2, 2, 1);
        for r in [1.0, 2.0, 3.0] {
            b.push(t(r)).unwrap();
        }
        let rewards: Vec<f64> = b.iter().map(|x| x.reward).collect();
        assert_eq!(rewards, vec![2.0, 3.0]);
    }

    #[test]
    fn single_push() {
        let mut b = ReplayBuffer::new(10, 2, 1);
        b.push(t(0.0)).unwrap();
        assert_eq!(b.len(), 1);
    }

    #[test]
    fn saturation() {
        let mut b = ReplayBuffer::new(1000, 2, 1);
        for i in 0..10_000 {
            b.push(t(i as f64)).unwrap();
        }
        assert_eq!(b.len(), 1000);
        assert_eq!(b.iter().next().unwrap().reward, 9000.0);
        assert_eq!(b.iter().last().unwrap().reward, 9999.0);
    }

    #[test]
    fn dimension_mismatch() {
        let mut b = ReplayBuffer::new(4, 3, 1);
        assert_eq!(b.push(t(0.0)).unwrap_err(), SacError::TransitionShape { expected: 3, found: 2 });
    }

    #[test]
    fn not_ready_until_enough_items() {
        let mut b = ReplayBuffer::new(8, 2, 1);
        let mut rng = Streams::new(0).stream(Stream::Replay);
        b.push(t(1.0)).unwrap();
        assert!(matches!(b.sample(2, &mut rng), Err(SacError::NotReady { have: 1, need: 2 })));
        b.push(t(2.0)).unwrap();
        assert_eq!(b.sample(2, &mut rng).unwrap().len(), 2);
    }
}
