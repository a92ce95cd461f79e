//! One-dimensional corridor with forward and stop actions, for checking the
//! PPO machinery in isolation.

use rand::seq::SliceRandom;
use rand::Rng as _;

use super::loss::ppo_clip_graph;
use super::returns::{compute_gae, normalize_advantages, GaeInput};
use super::reward::{reward_terms, RewardConfig};
use crate::error::{Error, Result};
use crate::numerics::{adam_step, log_softmax, softmax, AdamConfig, AdamState, Graph, ParamId, ParamStore, Tensor};
use crate::rng::{substream, Rng};
use crate::world::{Heading, UavState};

#[derive(Clone, Debug, PartialEq)]
pub struct CorridorConfig {
    pub length: i32,
    /// Meters per cell; above `d_goal` so that only the goal cell earns the goal bonus.
    pub cell_size: f64,
    pub max_steps: usize,
    pub reward: RewardConfig,
    pub hidden: usize,
    pub gamma: f64,
    pub lambda_gae: f64,
    pub clip_eps: f64,
    pub rollout_steps: usize,
    pub epochs_per_update: usize,
    pub minibatch_size: usize,
    pub optimizer: AdamConfig,
    pub entropy_coef: f64,
    pub value_coef: f64,
    /// Environment-step budget.
    pub max_env_steps: usize,
    /// Stop early once the probe success rate reaches this percentage.
    pub target_sr: f64,
}

impl Default for CorridorConfig {
    fn default() -> Self {
        Self {
            length: 12,
            cell_size: 20.0,
            max_steps: 24,
            reward: RewardConfig::default(),
            hidden: 32,
            gamma: 0.99,
            lambda_gae: 0.95,
            clip_eps: 0.2,
            rollout_steps: 512,
            epochs_per_update: 4,
            minibatch_size: 64,
            optimizer: AdamConfig::with_lr(3e-3),
            entropy_coef: 0.01,
            value_coef: 0.5,
            max_env_steps: 20_000,
            target_sr: 95.0,
        }
    }
}

/// Actions of the corridor: forward and stop.
pub const CORRIDOR_ACTIONS: usize = 2;
const FORWARD: usize = 0;
const STOP: usize = 1;

fn features(x: i32, goal: i32, len: i32) -> [f64; 3] {
    let l = len as f64;
    let off = (goal - x) as f64;
    [x as f64 / l, off / l, off.clamp(-1.0, 1.0)]
}

/// Two-layer actor-critic over corridor features.
#[derive(Clone, Debug)]
pub struct CorridorPolicy {
    pub store: ParamStore,
    w1: ParamId,
    b1: ParamId,
    wa: ParamId,
    ba: ParamId,
    wv: ParamId,
    bv: ParamId,
}

impl CorridorPolicy {
    pub fn new(hidden: usize, rng: &mut Rng) -> Result<Self> {
        let mut store = ParamStore::new();
        let w1 = store.add_uniform("corridor.w1", &[3, hidden], 3, rng)?;
        let b1 = store.add_const("corridor.b1", &[hidden], 0.0)?;
        let wa = store.add_uniform("corridor.actor.w", &[hidden, CORRIDOR_ACTIONS], hidden, rng)?;
        let ba = store.add_const("corridor.actor.b", &[CORRIDOR_ACTIONS], 0.0)?;
        let wv = store.add_uniform("corridor.value.w", &[hidden, 1], hidden, rng)?;
        let bv = store.add_const("corridor.value.b", &[1], 0.0)?;
        Ok(Self { store, w1, b1, wa, ba, wv, bv })
    }

    fn forward(&self, g: &mut Graph, x: Tensor) -> Result<(crate::numerics::Var, crate::numerics::Var)> {
        let x = g.constant(x);
        let (w1, b1, wa, ba, wv, bv) =
            (g.param(&self.store, self.w1), g.param(&self.store, self.b1), g.param(&self.store, self.wa), g.param(&self.store, self.ba), g.param(&self.store, self.wv), g.param(&self.store, self.bv));
        let h = g.linear(x, w1, b1)?;
        let h = g.tanh(h)?;
        Ok((g.linear(h, wa, ba)?, g.linear(h, wv, bv)?))
    }

    /// `(logits, value)` for one state.
    pub fn evaluate(&self, x: i32, goal: i32, len: i32) -> Result<([f64; CORRIDOR_ACTIONS], f64)> {
        let mut g = Graph::new();
        let (l, v) = self.forward(&mut g, Tensor::new(vec![1, 3], features(x, goal, len).to_vec())?)?;
        let d = g.value(l).data();
        Ok(([d[0], d[1]], g.value(v).item()))
    }
}

struct Step {
    feat: [f64; 3],
    action: usize,
    log_prob: f64,
    value: f64,
    reward: f64,
    done: bool,
    end: bool,
    next_value: f64,
}

fn state(x: i32) -> UavState {
    UavState::new(x, 0, 1, Heading::East)
}

/// Runs one episode; `rng = None` is greedy.
fn episode(policy: &CorridorPolicy, cfg: &CorridorConfig, start: i32, goal: i32, mut rng: Option<&mut Rng>) -> Result<(Vec<Step>, bool)> {
    let mut x = start;
    let mut steps = Vec::new();
    let g = (goal as f64, 0.0);
    for t in 0..cfg.max_steps {
        let (logits, value) = policy.evaluate(x, goal, cfg.length)?;
        let lp = log_softmax(&logits);
        let action = match rng.as_deref_mut() {
            Some(r) => {
                let p = softmax(&logits);
                usize::from(r.gen::<f64>() >= p[0])
            }
            None => usize::from(logits[STOP] > logits[FORWARD]),
        };
        let prev = state(x);
        if action == FORWARD && x + 1 < cfg.length {
            x += 1;
        }
        let reward = reward_terms(&prev, &state(x), g, g, cfg.cell_size, &cfg.reward).clipped;
        let done = action == STOP;
        let end = done || t + 1 == cfg.max_steps;
        steps.push(Step { feat: features(prev.x, goal, cfg.length), action, log_prob: lp[action], value, reward, done, end, next_value: 0.0 });
        if done {
            return Ok((steps, x == goal));
        }
    }
    let (_, boot) = policy.evaluate(x, goal, cfg.length)?;
    if let Some(last) = steps.last_mut() {
        last.next_value = boot;
    }
    Ok((steps, false))
}

/// Every `(start, goal)` pair with the goal ahead of the start. The last cell
/// is never a goal, since pressing forward against the end wall would hover on it.
pub fn corridor_pairs(len: i32) -> Vec<(i32, i32)> {
    (0..len - 1).flat_map(|s| (s + 1..len - 1).map(move |g| (s, g))).collect()
}

/// Greedy success rate (%) over all start/goal pairs; success is stopping on the goal cell.
pub fn corridor_probe(policy: &CorridorPolicy, cfg: &CorridorConfig) -> Result<f64> {
    let pairs = corridor_pairs(cfg.length);
    let mut hits = 0;
    for &(s, g) in &pairs {
        hits += usize::from(episode(policy, cfg, s, g, None)?.1);
    }
    Ok(100.0 * hits as f64 / pairs.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorridorUpdate {
    pub env_steps: usize,
    pub mean_return: f64,
    pub first_mean_ratio: f64,
    pub clip_fraction: f64,
    pub probe_sr: f64,
}

#[derive(Clone, Debug)]
pub struct CorridorResult {
    pub policy: CorridorPolicy,
    pub updates: Vec<CorridorUpdate>,
    /// Environment steps consumed when the target was first met.
    pub solved_at: Option<usize>,
}

/// Pure PPO on the corridor until the probe target or the step budget.
pub fn train_corridor(cfg: &CorridorConfig, seed: u64) -> Result<CorridorResult> {
    if cfg.length < 3 || cfg.max_steps == 0 || cfg.rollout_steps == 0 || cfg.minibatch_size == 0 {
        return Err(Error::Config("corridor needs length >= 3 and positive step/batch sizes".into()));
    }
    let mut policy = CorridorPolicy::new(cfg.hidden, &mut substream(seed, "corridor-init", 0))?;
    let mut adam = AdamState::new(&policy.store);
    let pairs = corridor_pairs(cfg.length);
    let mut env_steps = 0;
    let mut updates = Vec::new();
    let mut episode_index = 0u64;
    let mut solved_at = None;
    while env_steps < cfg.max_env_steps {
        let mut batch: Vec<Step> = Vec::new();
        let mut returns = Vec::new();
        while batch.len() < cfg.rollout_steps && env_steps + batch.len() < cfg.max_env_steps {
            let mut rng = substream(seed, "corridor-episode", episode_index);
            episode_index += 1;
            let (s, g) = pairs[rng.gen_range(0..pairs.len())];
            let (steps, _) = episode(&policy, cfg, s, g, Some(&mut rng))?;
            returns.push(steps.iter().map(|s| s.reward).sum::<f64>());
            batch.extend(steps);
        }
        env_steps += batch.len();
        for i in 0..batch.len() {
            if !batch[i].end {
                batch[i].next_value = batch[i + 1].value;
            }
        }
        let pick = |f: fn(&Step) -> f64| batch.iter().map(f).collect::<Vec<f64>>();
        let (rewards, values, next_values) = (pick(|s| s.reward), pick(|s| s.value), pick(|s| s.next_value));
        let dones: Vec<bool> = batch.iter().map(|s| s.done).collect();
        let ends: Vec<bool> = batch.iter().map(|s| s.end).collect();
        let (mut adv, targets) = compute_gae(&GaeInput { rewards: &rewards, values: &values, next_values: &next_values, dones: &dones, episode_ends: &ends }, cfg.gamma, cfg.lambda_gae)?;
        normalize_advantages(&mut adv);
        let mut order: Vec<usize> = (0..batch.len()).collect();
        let mut first_ratio = None;
        let mut clipped = (0usize, 0usize);
        for epoch in 0..cfg.epochs_per_update {
            order.shuffle(&mut substream(seed, "corridor-shuffle", ((updates.len() as u64) << 16) | epoch as u64));
            for idx in order.chunks(cfg.minibatch_size) {
                let n = idx.len();
                let x = Tensor::new(vec![n, 3], idx.iter().flat_map(|&i| batch[i].feat).collect())?;
                let mut g = Graph::new();
                let (logits, value) = policy.forward(&mut g, x)?;
                let logp = g.log_softmax(logits)?;
                let actions: Vec<usize> = idx.iter().map(|&i| batch[i].action).collect();
                let lp_new = g.gather(logp, &actions)?;
                let lp_old: Vec<f64> = idx.iter().map(|&i| batch[i].log_prob).collect();
                let a: Vec<f64> = idx.iter().map(|&i| adv[i]).collect();
                let obj = ppo_clip_graph(&mut g, lp_new, &lp_old, &a, cfg.clip_eps)?;
                let m = g.mean(obj)?;
                let l_clip = g.scale(m, -1.0)?;
                let l_v = g.mse(value, Tensor::new(vec![n, 1], idx.iter().map(|&i| targets[i]).collect())?)?;
                let probs = g.softmax_logits(logits)?;
                let plogp = g.mul(probs, logp)?;
                let rows = g.sum_rows(plogp)?;
                let neg_ent = g.mean(rows)?;
                let cv = g.scale(l_v, cfg.value_coef)?;
                let ce = g.scale(neg_ent, cfg.entropy_coef)?;
                let s1 = g.add(l_clip, cv)?;
                let loss = g.add(s1, ce)?;
                let ratios: Vec<f64> = g.value(lp_new).data().iter().zip(&lp_old).map(|(n, o)| (n - o).exp()).collect();
                first_ratio.get_or_insert(ratios.iter().sum::<f64>() / n as f64);
                clipped.0 += ratios.iter().filter(|r| (*r - 1.0).abs() > cfg.clip_eps).count();
                clipped.1 += n;
                let grads = g.backward(loss)?.param_grads(&policy.store);
                adam_step(&mut policy.store, &grads, &mut adam, &cfg.optimizer)?;
            }
        }
        let probe_sr = corridor_probe(&policy, cfg)?;
        updates.push(CorridorUpdate {
            env_steps,
            mean_return: returns.iter().sum::<f64>() / returns.len().max(1) as f64,
            first_mean_ratio: first_ratio.unwrap_or(1.0),
            clip_fraction: clipped.0 as f64 / clipped.1.max(1) as f64,
            probe_sr,
        });
        if probe_sr >= cfg.target_sr {
            solved_at = Some(env_steps);
            break;
        }
    }
    Ok(CorridorResult { policy, updates, solved_at })
}
