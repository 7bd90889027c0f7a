//! Point-mass navigation tasks in the square room `[−6, 6]²`.
//!
//! The agent moves by `p′ = clip(p + a)` with `a` clipped to `[−1, 1]²` and is
//! rewarded by a fixed map of its new position:
//!
//! * **deceptive**: start `(4.5, 0)`; a strip `x ∈ [3.5, 5.5]` pays `+0.5` per
//!   step, a pit (disk of radius 2.5 at the origin) pays `−50` and ends the
//!   episode, a goal disk of radius 0.75 at `(−4.5, 0)` pays `+100` and ends
//!   the episode; horizon 100. The straight line to the goal crosses the pit,
//!   a path along the walls does not.
//! * **four-goal**: start at the origin, goals at `(±5, 0)` and `(0, ±5)`,
//!   reward `−min_g ‖p − g‖`; horizon 20.
//! * **sparse**: start at the origin, reward `+1` whenever `‖p‖ > 0.6`, else 0;
//!   horizon 50.
//!
//! Observations are positions divided by the room half-width.

use alloc::vec::Vec;

use crate::math;

pub const ROOM_HALF_WIDTH: f64 = 6.0;
pub const ACTION_BOUND: f64 = 1.0;

pub const DECEPTIVE_START: [f64; 2] = [4.5, 0.0];
pub const STRIP_X: (f64, f64) = (3.5, 5.5);
pub const STRIP_REWARD: f64 = 0.5;
pub const PIT_RADIUS: f64 = 2.5;
pub const PIT_REWARD: f64 = -50.0;
pub const GOAL_CENTER: [f64; 2] = [-4.5, 0.0];
pub const GOAL_RADIUS: f64 = 0.75;
pub const GOAL_REWARD: f64 = 100.0;

pub const FOUR_GOALS: [[f64; 2]; 4] = [[5.0, 0.0], [0.0, 5.0], [-5.0, 0.0], [0.0, -5.0]];
pub const SPARSE_THRESHOLD: f64 = 0.6;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EnvError {
    #[error("non-finite action component {index}")]
    NonFiniteAction { index: usize },
    #[error("action has {found} components, expected {expected}")]
    ActionDimension { expected: usize, found: usize },
    #[error("unknown environment `{0}`")]
    Unknown(alloc::string::String),
}

/// Outcome of one transition.
#[derive(Debug, Clone, PartialEq)]
pub struct StepResult<S> {
    pub state: S,
    pub reward: f64,
    /// The task ended (pit, goal); bootstrapping stops here.
    pub terminal: bool,
    /// The episode is over, either terminal or at the horizon.
    pub done: bool,
}

/// A deterministic episodic task.
pub trait Environment {
    type State: Clone;

    fn obs_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn horizon(&self) -> usize;
    fn reset(&self) -> Self::State;
    fn step(&self, state: &Self::State, action: &[f64]) -> Result<StepResult<Self::State>, EnvError>;
    fn observe(&self, state: &Self::State) -> Vec<f64>;
    /// Position used by trajectory exports and terminal-state histograms.
    fn position(&self, state: &Self::State) -> [f64; 2];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EnvKind {
    Deceptive,
    FourGoal,
    Sparse,
}

impl EnvKind {
    pub const ALL: [EnvKind; 3] = [EnvKind::Deceptive, EnvKind::FourGoal, EnvKind::Sparse];

    pub fn name(self) -> &'static str {
        match self {
            EnvKind::Deceptive => "deceptive",
            EnvKind::FourGoal => "four-goal",
            EnvKind::Sparse => "sparse",
        }
    }

    pub fn from_name(name: &str) -> Result<Self, EnvError> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == name)
            .ok_or_else(|| EnvError::Unknown(name.into()))
    }
}

/// Static description of a task.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    pub name: &'static str,
    pub action_low: [f64; 2],
    pub action_high: [f64; 2],
    pub horizon: usize,
    pub room_half_width: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointState {
    pub pos: [f64; 2],
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointEnv {
    kind: EnvKind,
    spec: EnvSpec,
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    math::sqrt(dx * dx + dy * dy)
}

fn clip(x: f64, bound: f64) -> f64 {
    x.max(-bound).min(bound)
}

impl PointEnv {
    pub fn new(kind: EnvKind) -> Self {
        let horizon = match kind {
            EnvKind::Deceptive => 100,
            EnvKind::FourGoal => 20,
            EnvKind::Sparse => 50,
        };
        let spec = EnvSpec {
            name: kind.name(),
            action_low: [-ACTION_BOUND; 2],
            action_high: [ACTION_BOUND; 2],
            horizon,
            room_half_width: ROOM_HALF_WIDTH,
        };
        Self { kind, spec }
    }

    pub fn kind(&self) -> EnvKind {
        self.kind
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn start(&self) -> [f64; 2] {
        match self.kind {
            EnvKind::Deceptive => DECEPTIVE_START,
            EnvKind::FourGoal | EnvKind::Sparse => [0.0, 0.0],
        }
    }

    /// Reward for arriving at `p`.
    pub fn reward_at(&self, p: [f64; 2]) -> f64 {
        match self.kind {
            EnvKind::Deceptive => {
                if dist(p, [0.0, 0.0]) <= PIT_RADIUS {
                    PIT_REWARD
                } else if dist(p, GOAL_CENTER) <= GOAL_RADIUS {
                    GOAL_REWARD
                } else if p[0] >= STRIP_X.0 && p[0] <= STRIP_X.1 {
                    STRIP_REWARD
                } else {
                    0.0
                }
            }
            EnvKind::FourGoal => {
                -FOUR_GOALS.iter().map(|&g| dist(p, g)).fold(f64::INFINITY, f64::min)
            }
            EnvKind::Sparse => {
                if dist(p, [0.0, 0.0]) > SPARSE_THRESHOLD {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Whether arriving at `p` ends the task.
    pub fn is_terminal(&self, p: [f64; 2]) -> bool {
        match self.kind {
            EnvKind::Deceptive => dist(p, [0.0, 0.0]) <= PIT_RADIUS || dist(p, GOAL_CENTER) <= GOAL_RADIUS,
            EnvKind::FourGoal | EnvKind::Sparse => false,
        }
    }

    /// Whether `p` lies in the deceptive room's goal disk.
    pub fn in_goal(&self, p: [f64; 2]) -> bool {
        self.kind == EnvKind::Deceptive && dist(p, GOAL_CENTER) <= GOAL_RADIUS
    }

    /// `reward_at` on an `n × n` grid spanning the room, row-major in `y` then
    /// `x`: `(x, y, r)` triples.
    pub fn reward_field(&self, n: usize) -> Vec<(f64, f64, f64)> {
        let w = self.spec.room_half_width;
        let denom = n.saturating_sub(1).max(1) as f64;
        let mut out = Vec::with_capacity(n * n);
        for j in 0..n {
            let y = -w + 2.0 * w * j as f64 / denom;
            for i in 0..n {
                let x = -w + 2.0 * w * i as f64 / denom;
                out.push((x, y, self.reward_at([x, y])));
            }
        }
        out
    }
}

impl Environment for PointEnv {
    type State = PointState;

    fn obs_dim(&self) -> usize {
        2
    }

    fn action_dim(&self) -> usize {
        2
    }

    fn horizon(&self) -> usize {
        self.spec.horizon
    }

    fn reset(&self) -> PointState {
        PointState { pos: self.start(), steps: 0 }
    }

    fn step(&self, state: &PointState, action: &[f64]) -> Result<StepResult<PointState>, EnvError> {
        if action.len() != 2 {
            return Err(EnvError::ActionDimension { expected: 2, found: action.len() });
        }
        if let Some(index) = action.iter().position(|a| !a.is_finite()) {
            return Err(EnvError::NonFiniteAction { index });
        }
        let w = self.spec.room_half_width;
        let pos = [
            clip(state.pos[0] + clip(action[0], ACTION_BOUND), w),
            clip(state.pos[1] + clip(action[1], ACTION_BOUND), w),
        ];
        let steps = state.steps + 1;
        let reward = self.reward_at(pos);
        let terminal = self.is_terminal(pos);
        Ok(StepResult {
            state: PointState { pos, steps },
            reward,
            terminal,
            done: terminal || steps >= self.spec.horizon,
        })
    }

    fn observe(&self, state: &PointState) -> Vec<f64> {
        let w = self.spec.room_half_width;
        alloc::vec![state.pos[0] / w, state.pos[1] / w]
    }

    fn position(&self, state: &PointState) -> [f64; 2] {
        state.pos
    }
}
