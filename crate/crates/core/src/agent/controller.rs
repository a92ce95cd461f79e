use rand::Rng as _;

use super::log::LogRow;
use super::model::{argmax, clamp_to_grid, ego_patch, pose_features, waypoint_context, HeadOutputs, Policy, PolicyBatch, POSE_FEATURES, WAYPOINT_CONTEXT};
use crate::error::{Error, Result};
use crate::mapper::{init_map, update_map, MapEncoder, NavMap, PriorConfig};
use crate::numerics::{log_softmax, softmax, BnPass, Graph, Tensor};
use crate::rng::Rng;
use crate::teacher::{extract_waypoints, plan_path, WaypointConfig};
use crate::training::{compute_reward_with_waypoint, RewardConfig};
use crate::world::{distance_to_goal, render_observation, Action, CityWorld, EpisodeSpec, Observation, UavState, NUM_ACTIONS};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecodeMode {
    Greedy,
    Sample,
}

/// Sub-goal bookkeeping of the tiered controller.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ControllerState {
    /// Number of waypoints issued so far.
    pub k: usize,
    pub waypoint: Option<(f64, f64)>,
    pub replan_count: usize,
    pub done: bool,
}

/// Model inputs captured at a decision, for on-policy updates.
#[derive(Clone, Debug, PartialEq)]
pub struct StepInputs {
    pub obs: Tensor,
    pub map_feature: Vec<f64>,
    pub pose: [f64; POSE_FEATURES],
    pub context: [f64; WAYPOINT_CONTEXT],
    pub log_prob: f64,
    /// Value head output in standardized units.
    pub value_std: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Decision {
    pub action: Action,
    pub k: usize,
    pub waypoint: Option<(f64, f64)>,
    pub heads: Option<HeadOutputs>,
    pub inputs: Option<StepInputs>,
}

/// What an agent sees at a decision point.
pub struct StepView<'a> {
    pub world: &'a CityWorld,
    pub episode: &'a EpisodeSpec,
    pub state: UavState,
    pub map: &'a NavMap,
    pub obs: &'a Observation,
    pub t: usize,
}

/// Anything that can drive an episode.
pub trait Navigator {
    fn begin(&mut self, world: &CityWorld, episode: &EpisodeSpec) -> Result<()>;
    fn act(&mut self, view: &StepView<'_>, rng: &mut Rng) -> Result<Decision>;
}

/// Fires when no waypoint exists yet or the pose is within `eps` of it.
pub fn needs_replan(ctrl: &ControllerState, state: &UavState, eps: f64) -> bool {
    match ctrl.waypoint {
        None => true,
        Some(w) => {
            let (x, y) = state.pos();
            ((x - w.0).powi(2) + (y - w.1).powi(2)).sqrt() < eps
        }
    }
}

/// Picks an action from logits: argmax, or a draw from the softmax.
pub fn choose_action(logits: &[f64; NUM_ACTIONS], mode: DecodeMode, rng: &mut Rng) -> (Action, f64) {
    let lp = log_softmax(logits);
    let i = match mode {
        DecodeMode::Greedy => argmax(logits),
        DecodeMode::Sample => {
            let p = softmax(logits);
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut pick = NUM_ACTIONS - 1;
            for (j, pj) in p.iter().enumerate() {
                acc += pj;
                if u < acc {
                    pick = j;
                    break;
                }
            }
            pick
        }
    };
    (Action::ALL[i], lp[i])
}

/// One controller step: replan if triggered, then let the actor choose.
pub fn tiered_step(ctrl: &ControllerState, policy: &Policy, view: &StepView<'_>, mode: DecodeMode, record: bool, rng: &mut Rng) -> Result<(Decision, ControllerState)> {
    let cfg = &policy.cfg;
    let pose = pose_features(&view.state, &cfg.dims);
    let ego = ego_patch(&view.obs.patch, view.state.heading);
    let batch = PolicyBatch {
        maps: Some(MapEncoder::input_tensor(&[view.map], &cfg.drop_channels)),
        obs: ego.clone().reshape(&[1, view.obs.patch.shape()[0], view.obs.size(), view.obs.size()])?,
        pose: Tensor::new(vec![1, POSE_FEATURES], pose.to_vec())?,
        descriptors: vec![view.episode.descriptor],
        waypoint_context: Tensor::zeros(&[1, WAYPOINT_CONTEXT]),
    };
    let mut g = Graph::new();
    let heads = policy.forward_heads(&mut g, &batch, None, &mut BnPass::Infer)?;
    let (w, h) = (cfg.dims.width as f64, cfg.dims.height as f64);
    let goal = g.value(heads.goal).data();
    let goal = (goal[0] * w, goal[1] * h);
    let mut next = *ctrl;
    let target = if cfg.flat {
        let t = clamp_to_grid(goal, &cfg.dims);
        next.waypoint = Some(t);
        t
    } else {
        if needs_replan(ctrl, &view.state, cfg.eps_wp) {
            let wp = g.value(heads.waypoint).data();
            next.waypoint = Some(clamp_to_grid((wp[0] * w, wp[1] * h), &cfg.dims));
            next.k += 1;
            next.replan_count += 1;
        }
        next.waypoint.expect("waypoint set by replan")
    };
    let context = waypoint_context(&view.state, target, cfg.context_scale);
    let obs = g.constant(batch.obs.clone());
    let logits_var = policy.actor_logits(&mut g, obs, heads.state_feature, Tensor::new(vec![1, WAYPOINT_CONTEXT], context.to_vec())?)?;
    let out = policy.decode(&g, &heads, logits_var, 0);
    if out.logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!("non-finite action logits at step {}", view.t)));
    }
    let (action, log_prob) = choose_action(&out.logits, mode, rng);
    next.done = action == Action::Stop;
    let inputs = record.then(|| StepInputs { obs: ego, map_feature: g.value(heads.map_feature).data().to_vec(), pose, context, log_prob, value_std: g.value(heads.value_std).data()[0] });
    Ok((Decision { action, k: next.k, waypoint: next.waypoint, heads: Some(out), inputs }, next))
}

/// The learned tiered (or flat) agent.
pub struct ModelAgent<'a> {
    pub policy: &'a Policy,
    pub mode: DecodeMode,
    pub record: bool,
    pub ctrl: ControllerState,
}

impl<'a> ModelAgent<'a> {
    pub fn new(policy: &'a Policy, mode: DecodeMode) -> Self {
        Self { policy, mode, record: false, ctrl: ControllerState::default() }
    }
}

impl Navigator for ModelAgent<'_> {
    fn begin(&mut self, _: &CityWorld, _: &EpisodeSpec) -> Result<()> {
        self.ctrl = ControllerState::default();
        Ok(())
    }

    fn act(&mut self, view: &StepView<'_>, rng: &mut Rng) -> Result<Decision> {
        let (d, next) = tiered_step(&self.ctrl, self.policy, view, self.mode, self.record, rng)?;
        self.ctrl = next;
        Ok(d)
    }
}

/// Follows the expert plan, tracking teacher waypoints like the controller.
#[derive(Default)]
pub struct TeacherAgent {
    pub waypoint_cfg: WaypointConfig,
    pub eps_wp: f64,
    actions: Vec<Action>,
    waypoints: Vec<(i32, i32)>,
    k: usize,
    i: usize,
}

impl TeacherAgent {
    pub fn new(eps_wp: f64) -> Self {
        Self { eps_wp, ..Self::default() }
    }
}

/// Index of the teacher waypoint in force at `state`, advancing from `k`
/// past every waypoint within `eps` (the last one is never passed).
pub fn advance_waypoint(waypoints: &[(i32, i32)], mut k: usize, state: &UavState, eps: f64) -> usize {
    while k + 1 < waypoints.len() {
        let w = waypoints[k];
        let d = (((state.x - w.0).pow(2) + (state.y - w.1).pow(2)) as f64).sqrt();
        if d < eps {
            k += 1;
        } else {
            break;
        }
    }
    k
}

impl Navigator for TeacherAgent {
    fn begin(&mut self, world: &CityWorld, episode: &EpisodeSpec) -> Result<()> {
        let path = plan_path(world, &episode.start, episode.goal)?;
        self.waypoints = extract_waypoints(&path, world, &self.waypoint_cfg);
        self.actions = path.actions;
        self.k = 0;
        self.i = 0;
        Ok(())
    }

    fn act(&mut self, view: &StepView<'_>, _: &mut Rng) -> Result<Decision> {
        self.k = advance_waypoint(&self.waypoints, self.k, &view.state, self.eps_wp);
        let action = self.actions.get(self.i).copied().unwrap_or(Action::Stop);
        self.i += 1;
        let w = self.waypoints[self.k];
        Ok(Decision { action, k: self.k + 1, waypoint: Some((w.0 as f64, w.1 as f64)), heads: None, inputs: None })
    }
}

/// Replays a fixed action list, then stops.
pub struct ScriptedAgent {
    pub actions: Vec<Action>,
    i: usize,
}

impl ScriptedAgent {
    pub fn new(actions: Vec<Action>) -> Self {
        Self { actions, i: 0 }
    }
}

impl Navigator for ScriptedAgent {
    fn begin(&mut self, _: &CityWorld, _: &EpisodeSpec) -> Result<()> {
        self.i = 0;
        Ok(())
    }

    fn act(&mut self, _: &StepView<'_>, _: &mut Rng) -> Result<Decision> {
        let action = self.actions.get(self.i).copied().unwrap_or(Action::Stop);
        self.i += 1;
        Ok(Decision { action, k: 0, waypoint: None, heads: None, inputs: None })
    }
}

/// Uniform over the six actions.
pub struct RandomAgent;

impl Navigator for RandomAgent {
    fn begin(&mut self, _: &CityWorld, _: &EpisodeSpec) -> Result<()> {
        Ok(())
    }

    fn act(&mut self, _: &StepView<'_>, rng: &mut Rng) -> Result<Decision> {
        let action = Action::ALL[rng.gen_range(0..NUM_ACTIONS)];
        Ok(Decision { action, k: 0, waypoint: None, heads: None, inputs: None })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeOptions {
    pub prior: PriorConfig,
    /// Rewards are computed when set.
    pub reward: Option<RewardConfig>,
    /// Keep packed map snapshots per step.
    pub keep_maps: bool,
}

impl Default for EpisodeOptions {
    fn default() -> Self {
        Self { prior: PriorConfig::default(), reward: Some(RewardConfig::default()), keep_maps: false }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub t: usize,
    /// Pose before the action.
    pub state: UavState,
    pub decision: Decision,
    pub next: UavState,
    pub reward: Option<f64>,
    /// Pose-to-goal distance before the action, meters.
    pub distance_m: f64,
    pub packed_map: Option<Vec<u8>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub episode_id: String,
    pub steps: Vec<StepRecord>,
    pub final_state: UavState,
    /// The agent chose stop before the step budget ran out.
    pub stopped: bool,
    pub truncated: bool,
    /// Landmark-prior channel of the episode map, for snapshot decoding.
    pub prior: Vec<f64>,
}

impl Trajectory {
    pub fn positions(&self) -> Vec<UavState> {
        let mut v: Vec<UavState> = self.steps.iter().map(|s| s.state).collect();
        v.push(self.final_state);
        v
    }

    pub fn actions(&self) -> Vec<Action> {
        self.steps.iter().map(|s| s.decision.action).collect()
    }

    /// Rows of the trajectory log, closed by the final pose.
    pub fn log_rows(&self, goal: (i32, i32), cell_size: f64) -> Vec<LogRow> {
        let mut rows: Vec<LogRow> = self
            .steps
            .iter()
            .map(|s| LogRow {
                t: s.t,
                x: s.state.x,
                y: s.state.y,
                z: s.state.z,
                heading: s.state.heading,
                action: Some(s.decision.action),
                k: s.decision.k,
                waypoint: s.decision.waypoint,
                goal_hat: s.decision.heads.map(|h| h.goal),
                progress_hat: s.decision.heads.map(|h| h.progress),
                value_hat: s.decision.heads.map(|h| h.value),
                reward: s.reward,
                distance_m: s.distance_m,
            })
            .collect();
        let f = self.final_state;
        rows.push(LogRow {
            t: self.steps.len(),
            x: f.x,
            y: f.y,
            z: f.z,
            heading: f.heading,
            action: None,
            k: self.steps.last().map_or(0, |s| s.decision.k),
            waypoint: None,
            goal_hat: None,
            progress_hat: None,
            value_hat: None,
            reward: None,
            distance_m: distance_to_goal(&f, goal, cell_size),
        });
        rows
    }
}

/// Render, update the map, decide, step; until stop or the step budget.
pub fn run_episode(agent: &mut dyn Navigator, world: &CityWorld, episode: &EpisodeSpec, opts: &EpisodeOptions, rng: &mut Rng) -> Result<Trajectory> {
    if !world.is_valid(&episode.start) || !world.in_bounds(episode.goal.0, episode.goal.1) {
        return Err(Error::Contract(format!("episode {} is not valid in world {}", episode.id, world.id)));
    }
    let mut map = init_map(world, episode, &opts.prior)?;
    let prior = map.channel(crate::mapper::LANDMARK_PRIOR).to_vec();
    agent.begin(world, episode)?;
    let goal = episode.goal_f();
    let mut state = episode.start;
    let mut steps = Vec::new();
    let mut stopped = false;
    for t in 0..episode.max_steps {
        let obs = render_observation(world, &state);
        update_map(&mut map, &state, &obs);
        let view = StepView { world, episode, state, map: &map, obs: &obs, t };
        let decision = agent.act(&view, rng)?;
        let out = world.step(&state, decision.action)?;
        let reward = opts.reward.as_ref().map(|cfg| {
            let wp = decision.waypoint.unwrap_or(goal);
            compute_reward_with_waypoint(&state, &out.next, goal, wp, world, cfg)
        });
        steps.push(StepRecord {
            t,
            state,
            next: out.next,
            reward,
            distance_m: distance_to_goal(&state, episode.goal, world.cell_size),
            packed_map: opts.keep_maps.then(|| map.pack_dynamic()),
            decision,
        });
        state = out.next;
        if out.terminal {
            stopped = true;
            break;
        }
    }
    Ok(Trajectory { episode_id: episode.id.clone(), steps, final_state: state, stopped, truncated: !stopped, prior })
}
