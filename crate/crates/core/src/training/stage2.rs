use std::fmt::Write as _;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng as _;

use super::loss::{check_lambda_rl, ppo_clip_graph, LossReport};
use super::returns::{compute_gae, normalize_advantages, GaeInput};
use super::reward::RewardConfig;
use super::stage1::{sample_refs, supervised_batch, supervised_composite, SampleRef};
use crate::agent::{pose_features, run_episode, DecodeMode, EpisodeOptions, ModelAgent, Policy, PolicyBatch, POSE_FEATURES, WAYPOINT_CONTEXT};
use crate::error::{Error, Result};
use crate::evaluation::{episode_metrics, SUCCESS_THRESHOLD_M};
use crate::mapper::{update_map, MapEncoder, NavMap, PriorConfig};
use crate::numerics::{adam_step, AdamConfig, AdamState, BnPass, Graph, Tensor};
use crate::parallel::ordered_map;
use crate::rng::substream;
use crate::teacher::Demonstration;
use crate::world::{render_observation, CityWorld, EpisodeSpec, GoalDescriptor, OBS_CHANNELS};

/// How a stop transition enters the advantage estimate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopBootstrap {
    /// Stop ends the episode with no continuation value.
    Terminal,
    /// The stopped pose is absorbing: its reward repeats forever, `r / (1 - gamma)`.
    Absorbing,
}

impl FromStr for StopBootstrap {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "terminal" => Ok(Self::Terminal),
            "absorbing" => Ok(Self::Absorbing),
            _ => Err(Error::Config(format!("stop bootstrap must be terminal or absorbing, got {s:?}"))),
        }
    }
}

impl std::fmt::Display for StopBootstrap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Terminal => "terminal",
            Self::Absorbing => "absorbing",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PpoConfig {
    pub gamma: f64,
    pub lambda_gae: f64,
    pub clip_eps: f64,
    pub lambda_rl: f64,
    /// Minimum transitions per rollout; whole episodes are collected.
    pub rollout_steps: usize,
    pub epochs_per_update: usize,
    pub minibatch_size: usize,
    /// Expert samples per minibatch for the imitation term.
    pub expert_batch: usize,
    pub optimizer: AdamConfig,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub max_updates: usize,
    pub grad_clip: f64,
    pub stop_bootstrap: StopBootstrap,
    /// Bootstrap truncated episodes from the critic; otherwise the step budget ends them like a terminal.
    pub truncation_bootstrap: bool,
    /// Start the critic from the stage-1 value head; otherwise re-initialize it.
    pub warm_start: bool,
    pub freeze_map_encoder: bool,
    pub freeze_goal_heads: bool,
    /// Probe every this many updates (and after the last); `0` disables probing.
    pub probe_every: usize,
    pub seed: u64,
    pub workers: usize,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            lambda_gae: 0.95,
            clip_eps: 0.2,
            lambda_rl: 0.2,
            rollout_steps: 512,
            epochs_per_update: 4,
            minibatch_size: 64,
            expert_batch: 32,
            optimizer: AdamConfig::with_lr(3e-5),
            entropy_coef: 0.01,
            value_coef: 0.5,
            max_updates: 20,
            grad_clip: 5.0,
            stop_bootstrap: StopBootstrap::Terminal,
            truncation_bootstrap: true,
            warm_start: true,
            freeze_map_encoder: false,
            freeze_goal_heads: false,
            probe_every: 5,
            seed: 0,
            workers: 1,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        check_lambda_rl(self.lambda_rl)?;
        let fail = |m: String| Err(Error::Config(m));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return fail(format!("ppo.gamma must lie in (0,1), got {}", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.lambda_gae) {
            return fail(format!("ppo.lambda_gae must lie in [0,1], got {}", self.lambda_gae));
        }
        if !(self.clip_eps > 0.0) {
            return fail(format!("ppo.clip_eps must be positive, got {}", self.clip_eps));
        }
        if self.rollout_steps == 0 || self.epochs_per_update == 0 || self.minibatch_size == 0 || self.expert_batch == 0 {
            return fail("ppo rollout_steps, epochs_per_update, minibatch_size and expert_batch must be >= 1".into());
        }
        if !(self.optimizer.lr > 0.0) {
            return fail(format!("ppo.lr must be positive, got {}", self.optimizer.lr));
        }
        Ok(())
    }
}

/// Inputs of a value evaluation at one pose.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueInputs {
    pub map_feature: Vec<f64>,
    pub pose: [f64; POSE_FEATURES],
    pub descriptor: GoalDescriptor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub at: ValueInputs,
    /// Heading-aligned observation `[3, P, P]`.
    pub obs: Tensor,
    pub context: [f64; WAYPOINT_CONTEXT],
    pub action: usize,
    pub log_prob: f64,
    pub reward: f64,
    /// Stop was chosen.
    pub stopped: bool,
    pub episode_end: bool,
    /// State the episode was cut at, for truncated episode ends.
    pub bootstrap: Option<ValueInputs>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Rollout {
    pub transitions: Vec<Transition>,
    pub episode_returns: Vec<f64>,
}

impl Rollout {
    pub fn mean_return(&self) -> f64 {
        if self.episode_returns.is_empty() {
            return 0.0;
        }
        self.episode_returns.iter().sum::<f64>() / self.episode_returns.len() as f64
    }
}

fn value_inputs(policy: &Policy, map: &NavMap, state: &crate::world::UavState, descriptor: GoalDescriptor) -> Result<ValueInputs> {
    let mut g = Graph::new();
    let x = g.constant(MapEncoder::input_tensor(&[map], &policy.cfg.drop_channels));
    let f = policy.map_feature(&mut g, x, &mut BnPass::Infer)?;
    Ok(ValueInputs { map_feature: g.value(f).data().to_vec(), pose: pose_features(state, &policy.cfg.dims), descriptor })
}

/// One sampled episode as transitions.
pub fn rollout_episode(policy: &Policy, world: &CityWorld, episode: &EpisodeSpec, reward: &RewardConfig, prior: &PriorConfig, rng: &mut crate::rng::Rng) -> Result<(Vec<Transition>, f64)> {
    let mut agent = ModelAgent::new(policy, DecodeMode::Sample);
    agent.record = true;
    let opts = EpisodeOptions { prior: *prior, reward: Some(reward.clone()), keep_maps: true };
    let traj = run_episode(&mut agent, world, episode, &opts, rng)?;
    let mut out = Vec::with_capacity(traj.steps.len());
    let mut ret = 0.0;
    let last = traj.steps.len().saturating_sub(1);
    for (i, s) in traj.steps.iter().enumerate() {
        let inputs = s.decision.inputs.as_ref().ok_or_else(|| Error::Contract("rollout step lacks recorded inputs".into()))?;
        let r = s.reward.expect("reward configured");
        ret += r;
        let bootstrap = if i == last && traj.truncated {
            let packed = s.packed_map.as_ref().expect("maps kept");
            let mut map = NavMap::from_packed(world.width, world.height, world.z_max, &traj.prior, packed);
            update_map(&mut map, &traj.final_state, &render_observation(world, &traj.final_state));
            Some(value_inputs(policy, &map, &traj.final_state, episode.descriptor)?)
        } else {
            None
        };
        out.push(Transition {
            at: ValueInputs { map_feature: inputs.map_feature.clone(), pose: inputs.pose, descriptor: episode.descriptor },
            obs: inputs.obs.clone(),
            context: inputs.context,
            action: s.decision.action.index(),
            log_prob: inputs.log_prob,
            reward: r,
            stopped: s.decision.action == crate::world::Action::Stop,
            episode_end: i == last,
            bootstrap,
        });
    }
    Ok((out, ret))
}

/// Episodes drawn from `pool` in counter order until `cfg.rollout_steps`
/// transitions are gathered; returns the rollout and the advanced counter.
pub fn collect_rollout(policy: &Policy, worlds: &[CityWorld], pool: &[EpisodeSpec], reward: &RewardConfig, prior: &PriorConfig, cfg: &PpoConfig, mut counter: u64) -> Result<(Rollout, u64)> {
    if pool.is_empty() {
        return Err(Error::Contract("rollout episode pool is empty".into()));
    }
    let mut rollout = Rollout::default();
    let wave = cfg.workers.max(1) as u64;
    while rollout.transitions.len() < cfg.rollout_steps {
        let ids: Vec<u64> = (counter..counter + wave).collect();
        let results = ordered_map(&ids, cfg.workers, |_, &c| -> Result<(Vec<Transition>, f64)> {
            let pick = substream(cfg.seed, "rollout-pick", c).gen_range(0..pool.len());
            let episode = &pool[pick];
            let world = worlds.iter().find(|w| w.id == episode.world_id).ok_or_else(|| Error::MissingPrerequisite(format!("world {} is not loaded", episode.world_id)))?;
            rollout_episode(policy, world, episode, reward, prior, &mut substream(cfg.seed, "rollout-agent", c))
        });
        for r in results {
            if rollout.transitions.len() >= cfg.rollout_steps {
                break;
            }
            let (t, ret) = r?;
            rollout.transitions.extend(t);
            rollout.episode_returns.push(ret);
            counter += 1;
        }
    }
    Ok((rollout, counter))
}

/// Raw-scale critic values `V(s_t)` for `inputs`.
pub fn critic_values(policy: &Policy, inputs: &[&ValueInputs]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(inputs.len());
    for chunk in inputs.chunks(256) {
        let n = chunk.len();
        let d = chunk[0].map_feature.len();
        let feats = Tensor::new(vec![n, d], chunk.iter().flat_map(|v| v.map_feature.iter().copied()).collect())?;
        let batch = PolicyBatch {
            maps: None,
            obs: Tensor::zeros(&[n, OBS_CHANNELS, 1, 1]),
            pose: Tensor::new(vec![n, POSE_FEATURES], chunk.iter().flat_map(|v| v.pose).collect())?,
            descriptors: chunk.iter().map(|v| v.descriptor).collect(),
            waypoint_context: Tensor::zeros(&[n, WAYPOINT_CONTEXT]),
        };
        let mut g = Graph::new();
        let f = g.constant(feats);
        let heads = policy.forward_heads(&mut g, &batch, Some(f), &mut BnPass::Infer)?;
        out.extend(g.value(heads.value_std).data().iter().map(|u| policy.value_mean + policy.value_std * u));
    }
    Ok(out)
}

/// Advantages (unnormalized) and raw value targets of a rollout under `policy`'s critic.
pub fn rollout_targets(policy: &Policy, rollout: &Rollout, cfg: &PpoConfig) -> Result<(Vec<f64>, Vec<f64>)> {
    let tr = &rollout.transitions;
    let values = critic_values(policy, &tr.iter().map(|t| &t.at).collect::<Vec<_>>())?;
    let boot_inputs: Vec<&ValueInputs> = tr.iter().filter_map(|t| t.bootstrap.as_ref()).collect();
    let boot_values = critic_values(policy, &boot_inputs)?;
    let mut boot = boot_values.into_iter();
    let mut next_values = vec![0.0; tr.len()];
    let mut dones = vec![false; tr.len()];
    for (i, t) in tr.iter().enumerate() {
        if t.bootstrap.is_some() {
            let v = boot.next().expect("one value per bootstrap state");
            if cfg.truncation_bootstrap {
                next_values[i] = v;
            } else {
                dones[i] = true;
            }
        } else if t.stopped {
            match cfg.stop_bootstrap {
                StopBootstrap::Terminal => dones[i] = true,
                StopBootstrap::Absorbing => next_values[i] = t.reward / (1.0 - cfg.gamma),
            }
        } else if !t.episode_end {
            next_values[i] = values[i + 1];
        }
    }
    let rewards: Vec<f64> = tr.iter().map(|t| t.reward).collect();
    let ends: Vec<bool> = tr.iter().map(|t| t.episode_end).collect();
    compute_gae(&GaeInput { rewards: &rewards, values: &values, next_values: &next_values, dones: &dones, episode_ends: &ends }, cfg.gamma, cfg.lambda_gae)
}

/// Standardized value loss of `policy`'s critic against its own targets on `rollout`.
pub fn critic_value_loss(policy: &Policy, rollout: &Rollout, cfg: &PpoConfig) -> Result<f64> {
    let (_, targets) = rollout_targets(policy, rollout, cfg)?;
    let values = critic_values(policy, &rollout.transitions.iter().map(|t| &t.at).collect::<Vec<_>>())?;
    let s = policy.value_std;
    Ok(values.iter().zip(&targets).map(|(v, t)| ((v - t) / s).powi(2)).sum::<f64>() / values.len().max(1) as f64)
}

/// Per-update record of the stage-2 curve.
#[derive(Clone, Debug, PartialEq)]
pub struct UpdateStats {
    pub update: usize,
    pub losses: LossReport,
    pub mean_return: f64,
    /// Greedy success rate (%) on the probe set; `None` when not probed this update.
    pub probe_sr: Option<f64>,
    pub lr: f64,
}

pub const STAGE2_CURVE_COLUMNS: [&str; 9] = ["update", "L_IL", "L_V", "L_RL", "L_total", "entropy", "clip_fraction", "mean_return", "probe_SR"];

pub fn stage2_curve_csv(curve: &[UpdateStats]) -> String {
    let mut out = STAGE2_CURVE_COLUMNS.join(",");
    out.push('\n');
    for u in curve {
        let l = &u.losses;
        let probe = u.probe_sr.map_or(String::new(), |v| format!("{v:.4}"));
        let _ = writeln!(out, "{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{probe}", u.update, l.l_il, l.l_v, l.l_rl, l.l_total, l.entropy, l.clip_fraction, u.mean_return);
    }
    out
}

#[derive(Clone, Debug)]
pub struct Stage2Result {
    pub policy: Policy,
    pub adam: AdamState,
    pub curve: Vec<UpdateStats>,
    /// Mean probability ratio of the very first minibatch.
    pub first_mean_ratio: Option<f64>,
    /// Critic value loss on the first rollout before any update.
    pub initial_value_loss: Option<f64>,
    pub aborted: Option<String>,
}

/// Training context shared by the stage-2 updates.
pub struct Stage2Data<'a> {
    pub worlds: &'a [CityWorld],
    /// Rollout episodes.
    pub pool: &'a [EpisodeSpec],
    /// Expert corpus for the imitation term.
    pub demos: &'a [Demonstration],
    /// Held-out probe episodes (with their worlds in `worlds`).
    pub probe: &'a [EpisodeSpec],
    pub reward: &'a RewardConfig,
    pub prior: &'a PriorConfig,
    pub stage1_lambda_bc: f64,
    pub stage1_lambda_wp: f64,
}

/// Greedy success rate (%) over probe episodes.
pub fn probe_success_rate(policy: &Policy, worlds: &[CityWorld], probe: &[EpisodeSpec], prior: &PriorConfig, workers: usize) -> Result<f64> {
    if probe.is_empty() {
        return Ok(0.0);
    }
    let opts = EpisodeOptions { prior: *prior, reward: None, keep_maps: false };
    let hits = ordered_map(probe, workers, |i, e| -> Result<bool> {
        let world = worlds.iter().find(|w| w.id == e.world_id).ok_or_else(|| Error::MissingPrerequisite(format!("world {} is not loaded", e.world_id)))?;
        let mut agent = ModelAgent::new(policy, DecodeMode::Greedy);
        let traj = run_episode(&mut agent, world, e, &opts, &mut substream(0, "probe", i as u64))?;
        Ok(episode_metrics(&traj, e, world.cell_size, SUCCESS_THRESHOLD_M)?.success)
    });
    let mut n = 0usize;
    for h in hits {
        n += usize::from(h?);
    }
    Ok(100.0 * n as f64 / probe.len() as f64)
}

struct MinibatchOut {
    report: LossReport,
    grads: crate::numerics::ParamGrads,
    pass: BnPass,
}

#[allow(clippy::too_many_arguments)]
fn minibatch(policy: &Policy, rollout: &Rollout, idx: &[usize], adv: &[f64], targets_std: &[f64], expert: &[SampleRef], data: &Stage2Data<'_>, cfg: &PpoConfig) -> Result<MinibatchOut> {
    let n = idx.len();
    let tr: Vec<&Transition> = idx.iter().map(|&i| &rollout.transitions[i]).collect();
    let d = tr[0].at.map_feature.len();
    let p = tr[0].obs.shape()[1];
    let batch = PolicyBatch {
        maps: None,
        obs: Tensor::new(vec![n, OBS_CHANNELS, p, p], tr.iter().flat_map(|t| t.obs.data().iter().copied()).collect())?,
        pose: Tensor::new(vec![n, POSE_FEATURES], tr.iter().flat_map(|t| t.at.pose).collect())?,
        descriptors: tr.iter().map(|t| t.at.descriptor).collect(),
        waypoint_context: Tensor::new(vec![n, WAYPOINT_CONTEXT], tr.iter().flat_map(|t| t.context).collect())?,
    };
    let mut g = Graph::new();
    let feats = g.constant(Tensor::new(vec![n, d], tr.iter().flat_map(|t| t.at.map_feature.iter().copied()).collect())?);
    let f = policy.forward(&mut g, &batch, Some(feats), &mut BnPass::Infer)?;
    let logp = g.log_softmax(f.logits)?;
    let actions: Vec<usize> = tr.iter().map(|t| t.action).collect();
    let lp_new = g.gather(logp, &actions)?;
    let lp_old: Vec<f64> = tr.iter().map(|t| t.log_prob).collect();
    let a: Vec<f64> = idx.iter().map(|&i| adv[i]).collect();
    let obj = ppo_clip_graph(&mut g, lp_new, &lp_old, &a, cfg.clip_eps)?;
    let obj_mean = g.mean(obj)?;
    let l_clip = g.scale(obj_mean, -1.0)?;
    let t_std = Tensor::new(vec![n, 1], idx.iter().map(|&i| targets_std[i]).collect())?;
    let l_v_rl = g.mse(f.heads.value_std, t_std)?;
    let probs = g.softmax_logits(f.logits)?;
    let plogp = g.mul(probs, logp)?;
    let row = g.sum_rows(plogp)?;
    let neg_ent = g.mean(row)?;
    let cv = g.scale(l_v_rl, cfg.value_coef)?;
    let ce = g.scale(neg_ent, cfg.entropy_coef)?;
    let rl_a = g.add(l_clip, cv)?;
    let l_rl = g.add(rl_a, ce)?;

    let mut pass = BnPass::train();
    let sup = supervised_batch(policy, data.demos, data.worlds, expert, None)?;
    let comp = supervised_composite(&mut g, policy, &sup, data.stage1_lambda_bc, data.stage1_lambda_wp, &mut pass)?;
    let il_part = g.sub(comp.total, comp.l_v)?;
    let rl_scaled = g.scale(l_rl, cfg.lambda_rl)?;
    let total = g.add(comp.total, rl_scaled)?;

    let ratios: Vec<f64> = g.value(lp_new).data().iter().zip(&lp_old).map(|(n, o)| (n - o).exp()).collect();
    let report = LossReport {
        l_il: g.value(il_part).item(),
        l_v: g.value(comp.l_v).item(),
        l_rl: g.value(l_rl).item(),
        l_total: g.value(total).item(),
        entropy: -g.value(neg_ent).item(),
        clip_fraction: ratios.iter().filter(|r| (*r - 1.0).abs() > cfg.clip_eps).count() as f64 / n as f64,
        mean_ratio: ratios.iter().sum::<f64>() / n as f64,
    };
    let grads = if report.l_total.is_finite() && ratios.iter().all(|r| r.is_finite()) {
        let mut grads = g.backward(total)?.param_grads(&policy.store);
        if cfg.freeze_map_encoder {
            grads.zero_blocks(policy.map_param_ids());
        }
        if cfg.freeze_goal_heads {
            grads.zero_blocks(policy.head_param_ids().into_iter().filter(|(name, _)| matches!(*name, "goal" | "progress")).flat_map(|(_, ids)| ids));
        }
        if cfg.grad_clip > 0.0 {
            grads.clip_global_norm(cfg.grad_clip);
        }
        grads
    } else {
        crate::numerics::ParamGrads::empty(&policy.store)
    };
    Ok(MinibatchOut { report, grads, pass })
}

/// Largest mean ratio tolerated before an update is treated as diverged.
pub const RATIO_EXPLOSION: f64 = 10.0;

/// PPO fine-tuning with the Eq.-3 blend of imitation and RL terms.
pub fn train_stage2(stage1: Policy, data: &Stage2Data<'_>, cfg: &PpoConfig) -> Result<Stage2Result> {
    cfg.validate()?;
    if data.demos.is_empty() {
        return Err(Error::Contract("stage-2 imitation term needs the stage-1 corpus".into()));
    }
    let mut policy = stage1;
    if !cfg.warm_start {
        policy.reset_value_head(cfg.seed)?;
    }
    let mut adam = AdamState::new(&policy.store);
    let mut opt = cfg.optimizer;
    let mut halved = false;
    let expert_pool = sample_refs(data.demos);
    let mut counter = 0u64;
    let mut curve = Vec::with_capacity(cfg.max_updates);
    let mut first_mean_ratio = None;
    let mut initial_value_loss = None;
    for update in 0..cfg.max_updates {
        let (rollout, next_counter) = collect_rollout(&policy, data.worlds, data.pool, data.reward, data.prior, cfg, counter)?;
        counter = next_counter;
        let (mut adv, targets) = rollout_targets(&policy, &rollout, cfg)?;
        if update == 0 {
            initial_value_loss = Some(critic_value_loss(&policy, &rollout, cfg)?);
        }
        normalize_advantages(&mut adv);
        let targets_std: Vec<f64> = targets.iter().map(|t| (t - policy.value_mean) / policy.value_std).collect();
        let snapshot = (policy.store.clone(), adam.clone());
        let mut attempt = 0;
        let reports = loop {
            match run_update(&mut policy, &mut adam, &rollout, &adv, &targets_std, &expert_pool, data, cfg, &opt, update, attempt) {
                Ok(r) => break r,
                Err(msg) => {
                    policy.store = snapshot.0.clone();
                    adam = snapshot.1.clone();
                    if halved {
                        return Ok(Stage2Result { policy, adam, curve, first_mean_ratio, initial_value_loss, aborted: Some(msg) });
                    }
                    halved = true;
                    opt.lr *= 0.5;
                    attempt += 1;
                }
            }
        };
        if update == 0 {
            first_mean_ratio = reports.first().map(|r| r.mean_ratio);
        }
        let k = reports.len() as f64;
        let mean = |f: fn(&LossReport) -> f64| reports.iter().map(f).sum::<f64>() / k;
        let losses = LossReport {
            l_il: mean(|r| r.l_il),
            l_v: mean(|r| r.l_v),
            l_rl: mean(|r| r.l_rl),
            l_total: 0.0,
            entropy: mean(|r| r.entropy),
            clip_fraction: mean(|r| r.clip_fraction),
            mean_ratio: mean(|r| r.mean_ratio),
        };
        let losses = LossReport { l_total: losses.l_il + losses.l_v + cfg.lambda_rl * losses.l_rl, ..losses };
        let probe_now = cfg.probe_every > 0 && ((update + 1) % cfg.probe_every == 0 || update + 1 == cfg.max_updates);
        let probe_sr = if probe_now { Some(probe_success_rate(&policy, data.worlds, data.probe, data.prior, cfg.workers)?) } else { None };
        curve.push(UpdateStats { update, losses, mean_return: rollout.mean_return(), probe_sr, lr: opt.lr });
    }
    Ok(Stage2Result { policy, adam, curve, first_mean_ratio, initial_value_loss, aborted: None })
}

#[allow(clippy::too_many_arguments)]
fn run_update(
    policy: &mut Policy,
    adam: &mut AdamState,
    rollout: &Rollout,
    adv: &[f64],
    targets_std: &[f64],
    expert_pool: &[SampleRef],
    data: &Stage2Data<'_>,
    cfg: &PpoConfig,
    opt: &AdamConfig,
    update: usize,
    attempt: u64,
) -> std::result::Result<Vec<LossReport>, String> {
    let mut reports = Vec::new();
    let mut order: Vec<usize> = (0..rollout.transitions.len()).collect();
    let stream = ((update as u64) << 8) | attempt;
    for epoch in 0..cfg.epochs_per_update {
        order.shuffle(&mut substream(cfg.seed, "ppo-shuffle", (stream << 16) | epoch as u64));
        let mut expert_rng = substream(cfg.seed, "ppo-expert", (stream << 16) | epoch as u64);
        for idx in order.chunks(cfg.minibatch_size) {
            let expert: Vec<SampleRef> = (0..cfg.expert_batch).map(|_| expert_pool[expert_rng.gen_range(0..expert_pool.len())]).collect();
            let out = minibatch(policy, rollout, idx, adv, targets_std, &expert, data, cfg).map_err(|e| e.to_string())?;
            if !out.report.l_total.is_finite() || !out.report.mean_ratio.is_finite() || out.report.mean_ratio > RATIO_EXPLOSION {
                return Err(format!("stage-2 update {update} diverged (loss {}, mean ratio {})", out.report.l_total, out.report.mean_ratio));
            }
            adam_step(&mut policy.store, &out.grads, adam, opt).map_err(|e| e.to_string())?;
            out.pass.apply(&mut policy.store);
            reports.push(out.report);
        }
    }
    Ok(reports)
}
