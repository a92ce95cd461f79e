use super::planner::{extract_waypoints, plan_path, WaypointConfig};
use crate::agent::{advance_waypoint, LabelRow, LogRow};
use crate::error::{Error, Result};
use crate::mapper::{init_map, update_map, PriorConfig, LANDMARK_PRIOR};
use crate::training::{compute_reward_with_waypoint, discounted_return, RewardConfig};
use crate::world::{distance_to_goal, render_observation, Action, CityWorld, EpisodeSpec, UavState};

/// How the progress label is defined.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProgressLabel {
    /// `i / (T - 1)` over the `T` decisions.
    StepFraction,
    /// `1 - remaining / remaining_0` in translational moves.
    DistanceFraction,
}

impl std::str::FromStr for ProgressLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "step" => Ok(Self::StepFraction),
            "distance" => Ok(Self::DistanceFraction),
            other => Err(Error::Config(format!("unknown progress label {other:?} (step|distance)"))),
        }
    }
}

impl std::fmt::Display for ProgressLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::StepFraction => "step",
            Self::DistanceFraction => "distance",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DemoConfig {
    pub reward: RewardConfig,
    pub gamma: f64,
    pub prior: PriorConfig,
    pub waypoints: WaypointConfig,
    pub eps_wp: f64,
    pub progress: ProgressLabel,
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self { reward: RewardConfig::default(), gamma: 0.99, prior: PriorConfig::default(), waypoints: WaypointConfig::default(), eps_wp: 1.5, progress: ProgressLabel::StepFraction }
    }
}

/// One labeled decision of a demonstration.
#[derive(Clone, Debug, PartialEq)]
pub struct DemoStep {
    pub state: UavState,
    pub action: Action,
    /// Index into [`Demonstration::waypoints`] of the waypoint in force.
    pub waypoint_index: usize,
    pub progress: f64,
    pub value: f64,
    pub reward: f64,
    /// Dynamic map channels after the update at this pose (see [`crate::mapper::NavMap::pack_dynamic`]).
    pub packed_map: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Demonstration {
    pub episode: EpisodeSpec,
    pub waypoints: Vec<(i32, i32)>,
    pub steps: Vec<DemoStep>,
    pub prior: Vec<f64>,
    pub final_state: UavState,
}

impl Demonstration {
    pub fn waypoint(&self, i: usize) -> (f64, f64) {
        let w = self.waypoints[self.steps[i].waypoint_index];
        (w.0 as f64, w.1 as f64)
    }

    pub fn goal(&self) -> (f64, f64) {
        self.episode.goal_f()
    }

    /// Trajectory-log rows (labels standing in for predictions) plus label rows.
    pub fn log(&self, world: &CityWorld) -> (Vec<LogRow>, Vec<LabelRow>) {
        let goal = self.goal();
        let mut rows = Vec::with_capacity(self.steps.len() + 1);
        let mut labels = Vec::with_capacity(self.steps.len());
        for (t, s) in self.steps.iter().enumerate() {
            let w = self.waypoint(t);
            rows.push(LogRow {
                t,
                x: s.state.x,
                y: s.state.y,
                z: s.state.z,
                heading: s.state.heading,
                action: Some(s.action),
                k: s.waypoint_index + 1,
                waypoint: Some(w),
                goal_hat: Some(goal),
                progress_hat: Some(s.progress),
                value_hat: Some(s.value),
                reward: Some(s.reward),
                distance_m: distance_to_goal(&s.state, self.episode.goal, world.cell_size),
            });
            labels.push(LabelRow { expert_action: s.action, waypoint: w, progress: s.progress, value: s.value, goal });
        }
        let f = self.final_state;
        rows.push(LogRow {
            t: self.steps.len(),
            x: f.x,
            y: f.y,
            z: f.z,
            heading: f.heading,
            action: None,
            k: self.steps.last().map_or(0, |s| s.waypoint_index + 1),
            waypoint: None,
            goal_hat: None,
            progress_hat: None,
            value_hat: None,
            reward: None,
            distance_m: distance_to_goal(&f, self.episode.goal, world.cell_size),
        });
        (rows, labels)
    }
}

/// Replays the expert plan through the simulator and labels every decision.
pub fn build_demonstration(world: &CityWorld, episode: &EpisodeSpec, cfg: &DemoConfig) -> Result<Demonstration> {
    if !(0.0..1.0).contains(&cfg.gamma) {
        return Err(Error::Config(format!("discount must lie in [0, 1), got {}", cfg.gamma)));
    }
    let path = plan_path(world, &episode.start, episode.goal)?;
    let waypoints = extract_waypoints(&path, world, &cfg.waypoints);
    let mut map = init_map(world, episode, &cfg.prior)?;
    let prior = map.channel(LANDMARK_PRIOR).to_vec();
    let goal = episode.goal_f();
    let mut state = episode.start;
    let mut k = 0;
    let mut steps = Vec::with_capacity(path.actions.len());
    for (i, &action) in path.actions.iter().enumerate() {
        if state != path.states[i] {
            return Err(Error::Consistency(format!("episode {}: replay left the expert path at step {i}", episode.id)));
        }
        let obs = render_observation(world, &state);
        update_map(&mut map, &state, &obs);
        k = advance_waypoint(&waypoints, k, &state, cfg.eps_wp);
        let out = world.step(&state, action)?;
        if out.blocked {
            return Err(Error::Consistency(format!("episode {}: expert action {action} blocked at step {i} from {state:?}", episode.id)));
        }
        let w = waypoints[k];
        let reward = compute_reward_with_waypoint(&state, &out.next, goal, (w.0 as f64, w.1 as f64), world, &cfg.reward);
        steps.push(DemoStep { state, action, waypoint_index: k, progress: 0.0, value: 0.0, reward, packed_map: map.pack_dynamic() });
        state = out.next;
    }
    if (state.x, state.y) != episode.goal {
        return Err(Error::Consistency(format!("episode {}: replay ended at {:?}, not the goal", episode.id, (state.x, state.y))));
    }
    let rewards: Vec<f64> = steps.iter().map(|s| s.reward).collect();
    let values = discounted_return(&rewards, cfg.gamma);
    let n = steps.len();
    for (i, s) in steps.iter_mut().enumerate() {
        s.value = values[i];
        s.progress = match cfg.progress {
            ProgressLabel::StepFraction if n > 1 => i as f64 / (n - 1) as f64,
            ProgressLabel::StepFraction => 1.0,
            ProgressLabel::DistanceFraction if path.remaining[0] > 0.0 => 1.0 - path.remaining[i] / path.remaining[0],
            ProgressLabel::DistanceFraction => 1.0,
        };
    }
    Ok(Demonstration { episode: episode.clone(), waypoints, steps, prior, final_state: state })
}
