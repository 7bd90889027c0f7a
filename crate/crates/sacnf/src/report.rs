//! Post-training policy diagnostics bundled into one JSON document.

use rand::Rng;
use sacnf_core::analysis::{self, Grid, SampleMatrix};
use sacnf_core::env::{EnvKind, FOUR_GOALS, GOAL_CENTER, GOAL_RADIUS, ROOM_HALF_WIDTH};
use sacnf_core::sac::{rollout, Agent, Trajectory};
use sacnf_core::{Environment, PointEnv, PointState};
use serde::Serialize;

use crate::error::Error;

/// Cells per side of the terminal-state histogram (0.5 × 0.5 cells).
pub const HISTOGRAM_CELLS: usize = 24;
/// Radius around each four-goal target that counts as "at the goal".
pub const FOUR_GOAL_RADIUS: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalysisSettings {
    pub states: usize,
    pub actions: usize,
    pub gap_k_max: usize,
    pub gap_refs: usize,
    pub rollouts: usize,
}

impl Default for AnalysisSettings {
    fn default() -> Self {
        Self { states: 20, actions: 250, gap_k_max: 6, gap_refs: 10, rollouts: 400 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ParamCounts {
    pub policy: usize,
    pub policy_mean: usize,
    pub policy_scale: usize,
    pub policy_flows: usize,
    pub critics: usize,
}

impl ParamCounts {
    pub fn of(agent: &Agent) -> Self {
        let p = &agent.policy;
        let c = &agent.critics;
        Self {
            policy: p.count_params(),
            policy_mean: p.mean_net().param_count(),
            policy_scale: p.scale().params().len(),
            policy_flows: p.flows().param_count(),
            critics: c.q.param_count() + c.q2.as_ref().map_or(0, |q| q.param_count()) + 2 * c.v.param_count(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EstimateReport {
    pub value: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GapReport {
    /// Observation at which the actions were drawn.
    pub state: Vec<f64>,
    pub gaps: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub selected_k: usize,
    pub argmax_k: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct MomentReport {
    pub skewness: f64,
    pub excess_kurtosis: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct HistogramReport {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub nx: usize,
    pub ny: usize,
    /// Row-major with `y` as the row index; sums to one.
    pub mass: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct GoalMass {
    pub center: [f64; 2],
    pub radius: f64,
    pub fraction: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AnalysisReport {
    pub env: String,
    pub parameters: ParamCounts,
    /// Standardized KL to a Gaussian, averaged over the analysis states.
    pub shape_kl: EstimateReport,
    /// One gap-statistic fit per analysis state.
    pub gap: Vec<GapReport>,
    /// Per action dimension, at the start state.
    pub moments: Vec<MomentReport>,
    pub terminal_histogram: HistogramReport,
    pub goal_mass: Vec<GoalMass>,
    pub rollout_return_mean: f64,
}

/// Goal regions whose terminal mass is reported for `kind`.
pub fn goal_regions(kind: EnvKind) -> Vec<([f64; 2], f64)> {
    match kind {
        EnvKind::Deceptive => vec![(GOAL_CENTER, GOAL_RADIUS)],
        EnvKind::FourGoal => FOUR_GOALS.iter().map(|&g| (g, FOUR_GOAL_RADIUS)).collect(),
        EnvKind::Sparse => Vec::new(),
    }
}

/// The start state followed by states visited in `trajectories`, evenly
/// subsampled to `count` observations.
pub fn analysis_states(env: &PointEnv, trajectories: &[Trajectory], count: usize) -> Vec<Vec<f64>> {
    let visited: Vec<[f64; 2]> = trajectories.iter().flat_map(|t| t.positions[1..].iter().copied()).collect();
    let observe = |pos: [f64; 2]| env.observe(&PointState { pos, steps: 0 });
    let mut states = vec![env.observe(&env.reset())];
    let extra = count.saturating_sub(1).min(visited.len());
    for i in 0..extra {
        states.push(observe(visited[i * visited.len() / extra]));
    }
    states
}

/// Full diagnostic pass. Also returns the stochastic rollouts it drew.
pub fn analyze<R: Rng + ?Sized>(
    agent: &Agent,
    env: &PointEnv,
    settings: &AnalysisSettings,
    rng: &mut R,
) -> Result<(AnalysisReport, Vec<Trajectory>), Error> {
    let policy = &agent.policy;
    let trajectories = rollout(policy, env, settings.rollouts, rng)?;
    let states = analysis_states(env, &trajectories, settings.states);
    let kl = analysis::shape_kl(policy, &states, settings.actions, rng)?;

    let mut gap = Vec::with_capacity(states.len());
    let mut moments = Vec::new();
    for (id, state) in states.iter().enumerate() {
        let (samples, _) = analysis::draw_actions(policy, state, settings.actions, id, rng)?;
        if id == 0 {
            moments = column_moments(&samples)?;
        }
        let g = analysis::gap_statistic(&samples, settings.gap_k_max, settings.gap_refs, rng)?;
        gap.push(GapReport {
            state: state.clone(),
            selected_k: g.select_k(),
            argmax_k: g.argmax_k(),
            gaps: g.gaps,
            std_errors: g.std_errors,
            converged: g.converged,
        });
    }

    let terminals: Vec<[f64; 2]> = trajectories.iter().map(Trajectory::final_position).collect();
    let h = analysis::terminal_histogram(&terminals, Grid::square(ROOM_HALF_WIDTH, HISTOGRAM_CELLS))?;
    let goal_mass = goal_regions(env.kind())
        .into_iter()
        .map(|(center, radius)| GoalMass { center, radius, fraction: analysis::fraction_within(&terminals, center, radius) })
        .collect();
    let rollout_return_mean =
        trajectories.iter().map(Trajectory::total_return).sum::<f64>() / trajectories.len().max(1) as f64;
    let report = AnalysisReport {
        env: env.kind().name().to_string(),
        parameters: ParamCounts::of(agent),
        shape_kl: EstimateReport { value: kl.value, std_error: kl.std_error },
        gap,
        moments,
        terminal_histogram: HistogramReport {
            x_min: h.grid.x_min,
            x_max: h.grid.x_max,
            y_min: h.grid.y_min,
            y_max: h.grid.y_max,
            nx: h.grid.nx,
            ny: h.grid.ny,
            mass: h.mass,
        },
        goal_mass,
        rollout_return_mean,
    };
    Ok((report, trajectories))
}

fn column_moments(samples: &SampleMatrix) -> Result<Vec<MomentReport>, Error> {
    (0..samples.cols())
        .map(|j| {
            let column: Vec<f64> = (0..samples.rows()).map(|i| samples.row(i)[j]).collect();
            let m = analysis::moments(&column)?;
            Ok(MomentReport { skewness: m.skewness, excess_kurtosis: m.excess_kurtosis })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use sacnf_core::sac::Architecture;
    use sacnf_core::{Activation, FlowFamily, NoiseModel, Stream, Streams};

    fn agent(flows: usize) -> Agent {
        let arch = Architecture {
            policy_hidden: vec![8],
            policy_activation: Activation::Tanh,
            noise: NoiseModel::Conditional,
            flow_family: FlowFamily::Radial,
            flow_count: flows,
            critic_hidden: vec![8],
            critic_activation: Activation::Relu,
            twin_q: false,
        };
        Agent::new(&arch, 2, 2, &mut Streams::new(1).stream(Stream::Init)).unwrap()
    }

    #[test]
    fn untrained_report_is_consistent() {
        let env = PointEnv::new(EnvKind::FourGoal);
        let settings = AnalysisSettings { states: 3, actions: 60, gap_k_max: 3, gap_refs: 3, rollouts: 20 };
        let mut rng = Streams::new(2).stream(Stream::Analysis);
        let (report, trajectories) = analyze(&agent(2), &env, &settings, &mut rng).unwrap();
        assert_eq!(trajectories.len(), 20);
        assert_eq!(report.gap.len(), 3);
        assert_eq!(report.moments.len(), 2);
        assert_eq!(report.goal_mass.len(), 4);
        assert!((report.terminal_histogram.mass.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(report.terminal_histogram.mass.len(), HISTOGRAM_CELLS * HISTOGRAM_CELLS);
        assert_eq!(report.parameters.policy, agent(2).policy.count_params());
        assert!(report.shape_kl.value.is_finite());
        let json = serde_json::to_string(&report).unwrap();
        assert!(json.contains("\"shape_kl\""));
    }

    #[test]
    fn states_start_at_reset() {
        let env = PointEnv::new(EnvKind::Deceptive);
        let t = Trajectory { positions: vec![[4.5, 0.0], [4.0, 0.0], [3.0, 0.0]], rewards: vec![0.5, 0.0], terminal: false };
        let s = analysis_states(&env, &[t], 5);
        assert_eq!(s.len(), 3);
        assert_eq!(s[0], vec![0.75, 0.0]);
        assert_eq!(s[2], vec![0.5, 0.0]);
    }
}
