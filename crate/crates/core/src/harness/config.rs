//! Flat `key = value` experiment configuration with a typed schema.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::agent::{EnvDims, PolicyConfig};
use crate::error::{Error, Result};
use crate::evaluation::{AblationAxes, BenchmarkConfig};
use crate::mapper::{EncoderConfig, PriorConfig, CHANNEL_NAMES};
use crate::numerics::AdamConfig;
use crate::teacher::{DatasetConfig, DemoConfig, WaypointConfig};
use crate::training::{PpoConfig, RewardConfig, Stage1Config};
use crate::world::{Difficulty, EpisodeConfig, WorldConfig};

/// Value type and admissible range of a key.
#[derive(Clone, Debug, PartialEq)]
pub enum Kind {
    Int {
        min: i64,
        max: i64,
    },
    /// `open` excludes the bound itself.
    Float {
        min: f64,
        min_open: bool,
        max: f64,
        max_open: bool,
    },
    Bool,
    Choice(&'static [&'static str]),
    FloatList {
        len: Option<usize>,
        min: f64,
        max: f64,
    },
    IntList {
        min: i64,
    },
    ChoiceList(&'static [&'static str]),
    Text,
}

#[derive(Clone, Debug, PartialEq)]
pub struct KeySpec {
    pub key: &'static str,
    pub kind: Kind,
    pub default: String,
    /// Range as quoted in errors; derived from `kind` when empty.
    pub range: &'static str,
    pub help: &'static str,
}

const TIERS: &[&str] = &["easy", "medium", "hard"];
const EVAL_MODELS: &[&str] = &["rl", "il", "teacher", "random"];

fn float(min: f64, max: f64) -> Kind {
    Kind::Float { min, min_open: false, max, max_open: false }
}

fn positive() -> Kind {
    Kind::Float { min: 0.0, min_open: true, max: f64::INFINITY, max_open: false }
}

fn count(min: i64) -> Kind {
    Kind::Int { min, max: i64::MAX }
}

fn list<T: ToString>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn key(key: &'static str, kind: Kind, default: impl ToString, help: &'static str) -> KeySpec {
    KeySpec { key, kind, default: default.to_string(), range: "", help }
}

/// Every configuration key with its documented default.
pub fn schema() -> Vec<KeySpec> {
    let w = WorldConfig::default();
    let e = EpisodeConfig::default();
    let p = PriorConfig::default();
    let r = RewardConfig::default();
    let d = DemoConfig::default();
    let wp = WaypointConfig::default();
    let s1 = Stage1Config::default();
    let ppo = PpoConfig::default();
    let b = BenchmarkConfig::default();
    let m = PolicyConfig::new(EnvDims { width: w.width, height: w.height, z_max: w.z_max, patch: 1 });
    let enc = EncoderConfig::default();
    vec![
        key("run.seed", count(0), 0, "master seed"),
        key("run.workers", count(1), 1, "worker threads for rollouts and evaluation"),
        key("run.out", Kind::Text, "runs/default", "output directory"),
        key("world.seen", count(1), 24, "number of training (seen) worlds"),
        key("world.unseen", count(1), 8, "number of held-out (unseen) worlds"),
        key("world.seed", count(0), 100, "seed of the first seen world; seen world i uses seed + i"),
        key("world.unseen_seed", count(0), 9000, "seed of the first unseen world"),
        key("world.width", count(32), w.width, "grid width, cells"),
        key("world.height", count(32), w.height, "grid height, cells"),
        key("world.cell_size", positive(), w.cell_size, "cell edge, meters"),
        key("world.z_min", count(0), w.z_min, "lowest flight level"),
        key("world.z_max", count(1), w.z_max, "highest flight level"),
        key("world.cruise_alt", count(1), w.cruise_alt, "start altitude"),
        key("world.r_base", count(0), w.r_base, "observation radius at level 0, cells"),
        key("world.r_gain", count(0), w.r_gain, "observation radius gain per level, cells"),
        key("world.landmarks", count(2), w.landmarks, "landmarks per world"),
        key("world.landmark_radius_min", count(0), w.landmark_radius_min, "landmark footprint radius lower bound"),
        key("world.landmark_radius_max", count(0), w.landmark_radius_max, "landmark footprint radius upper bound"),
        key("world.landmark_spacing", positive(), w.landmark_spacing, "minimum landmark spacing, cells"),
        key("world.obstacle_density", Kind::Float { min: 0.0, min_open: false, max: 1.0, max_open: true }, w.obstacle_density, "building cover fraction"),
        key("world.building_min", count(1), w.building_min, "building edge lower bound, cells"),
        key("world.building_max", count(1), w.building_max, "building edge upper bound, cells"),
        key("world.tall_fraction", float(0.0, 1.0), w.tall_fraction, "fraction of buildings reaching z_max"),
        key("world.max_retries", count(1), w.max_retries, "generation attempts"),
        key("episode.tier_bounds", Kind::FloatList { len: Some(3), min: 0.0, max: f64::INFINITY }, list(&e.tier_bounds), "straight-line lower bounds of easy,medium,hard, cells"),
        key("episode.band_bounds", Kind::FloatList { len: Some(4), min: 0.0, max: f64::INFINITY }, list(&e.band_bounds), "distance band brackets, cells"),
        key("episode.budget_factor", float(1.0, f64::INFINITY), e.budget_factor, "step budget over the expert length"),
        key("episode.tags", count(1), e.tags, "descriptor tag vocabulary"),
        key("episode.max_retries", count(1), e.max_retries, "episode draws before giving up"),
        key("prior.radius", positive(), p.radius, "landmark prior disk radius, cells"),
        key("prior.inside", float(0.0, 1.0), p.inside, "prior weight on the described side"),
        key("prior.outside", float(0.0, 1.0), p.outside, "prior weight on the opposite side"),
        key("reward.alpha", float(0.0, f64::INFINITY), r.alpha, "distance-gain weight per meter"),
        key("reward.beta", float(0.0, f64::INFINITY), r.beta, "heading-alignment weight"),
        key("reward.eta", float(0.0, f64::INFINITY), r.eta, "goal bonus"),
        key("reward.delta", float(f64::NEG_INFINITY, 0.0), r.delta, "step penalty"),
        key("reward.d_goal", positive(), r.d_goal, "goal-bonus radius, meters"),
        key("reward.r_min", float(f64::NEG_INFINITY, f64::INFINITY), r.r_min, "reward clip lower bound"),
        key("reward.r_max", float(f64::NEG_INFINITY, f64::INFINITY), r.r_max, "reward clip upper bound"),
        key("reward.heading_reference", Kind::Choice(&["final_goal", "current_waypoint"]), r.heading_reference, "target of the heading term"),
        key("teacher.gamma", Kind::Float { min: 0.0, min_open: true, max: 1.0, max_open: true }, d.gamma, "discount of the value labels"),
        key("teacher.s_max", positive(), wp.s_max, "maximum waypoint gap, cells"),
        key("teacher.r_anchor", float(0.0, f64::INFINITY), wp.r_anchor, "landmark anchor distance, cells"),
        key("teacher.dedupe", float(0.0, f64::INFINITY), wp.dedupe, "waypoint merge distance, cells"),
        key("teacher.progress", Kind::Choice(&["step", "distance"]), d.progress, "progress label definition"),
        key("corpus.episodes", count(1), 300, "demonstrations in the imitation corpus"),
        key("corpus.tiers", Kind::ChoiceList(TIERS), "easy,medium,hard", "tiers of the corpus"),
        key("model.c0", count(1), enc.c0, "map encoder base width"),
        key("model.stages", count(1), enc.stages, "map encoder stages"),
        key("model.map_dim", count(1), enc.d, "map feature dimension"),
        key("model.obs_channels", count(1), m.obs_channels, "observation encoder width"),
        key("model.obs_dim", count(1), m.obs_dim, "observation feature dimension"),
        key("model.state_dim", count(1), m.state_dim, "pose feature dimension"),
        key("model.embed_dim", count(1), m.embed_dim, "descriptor embedding width"),
        key("model.desc_dim", count(1), m.desc_dim, "descriptor feature dimension"),
        key("model.hidden", count(1), m.hidden, "fusion trunk width"),
        key("model.actor_hidden", count(1), m.actor_hidden, "action head width"),
        key("model.max_landmarks", count(1), m.max_landmarks, "landmark embedding rows"),
        key("model.goal_to_planner", Kind::Bool, m.goal_to_planner, "feed the predicted goal to the waypoint head"),
        key("model.flat", Kind::Bool, m.flat, "condition the actor on the goal instead of waypoints"),
        key("model.eps_wp", positive(), m.eps_wp, "replanning radius, cells"),
        key("model.context_scale", positive(), m.context_scale, "waypoint context normalizer, cells"),
        key("model.drop_channels", Kind::ChoiceList(&CHANNEL_NAMES), "", "map channels zeroed at the encoder input"),
        key("il.epochs", count(0), s1.epochs, "stage-1 epochs"),
        key("il.batch_size", count(1), s1.batch_size, "stage-1 minibatch"),
        key("il.lr", positive(), s1.optimizer.lr, "stage-1 learning rate"),
        key("il.weight_decay", float(0.0, f64::INFINITY), s1.optimizer.weight_decay, "stage-1 weight decay"),
        key("il.lambda_bc", float(0.0, f64::INFINITY), s1.lambda_bc, "action cross-entropy weight"),
        key("il.lambda_wp", float(0.0, f64::INFINITY), s1.lambda_wp, "waypoint regression weight"),
        key("il.context_noise", float(0.0, f64::INFINITY), s1.context_noise, "actor target jitter, cells"),
        key("il.grad_clip", float(0.0, f64::INFINITY), s1.grad_clip, "gradient norm cap, 0 disables"),
        key("ppo.gamma", Kind::Float { min: 0.0, min_open: true, max: 1.0, max_open: true }, ppo.gamma, "discount"),
        key("ppo.lambda_gae", float(0.0, 1.0), ppo.lambda_gae, "GAE lambda"),
        key("ppo.clip_eps", positive(), ppo.clip_eps, "ratio clip"),
        KeySpec { range: "λ_RL ∈ [0,1]", ..key("ppo.lambda_rl", float(0.0, 1.0), ppo.lambda_rl, "weight of the reinforcement term") },
        key("ppo.rollout_steps", count(1), ppo.rollout_steps, "transitions per rollout"),
        key("ppo.epochs_per_update", count(1), ppo.epochs_per_update, "passes over each rollout"),
        key("ppo.minibatch_size", count(1), ppo.minibatch_size, "rollout minibatch"),
        key("ppo.expert_batch", count(1), ppo.expert_batch, "expert samples per minibatch"),
        key("ppo.lr", positive(), ppo.optimizer.lr, "stage-2 learning rate"),
        key("ppo.entropy_coef", float(0.0, f64::INFINITY), ppo.entropy_coef, "entropy bonus"),
        key("ppo.value_coef", float(0.0, f64::INFINITY), ppo.value_coef, "critic loss weight"),
        key("ppo.max_updates", count(0), ppo.max_updates, "stage-2 updates"),
        key("ppo.grad_clip", float(0.0, f64::INFINITY), ppo.grad_clip, "gradient norm cap, 0 disables"),
        key("ppo.stop_bootstrap", Kind::Choice(&["terminal", "absorbing"]), ppo.stop_bootstrap, "continuation value after stop"),
        key("ppo.truncation_bootstrap", Kind::Bool, ppo.truncation_bootstrap, "bootstrap episodes cut by the step budget"),
        key("ppo.warm_start", Kind::Bool, ppo.warm_start, "keep the stage-1 critic"),
        key("ppo.freeze_map_encoder", Kind::Bool, ppo.freeze_map_encoder, "freeze the map encoder in stage 2"),
        key("ppo.freeze_goal_heads", Kind::Bool, ppo.freeze_goal_heads, "freeze goal and progress heads in stage 2"),
        key("ppo.probe_every", count(0), ppo.probe_every, "probe period in updates, 0 disables"),
        key("ppo.pool_per_tier", count(1), 100, "rollout episodes per tier"),
        key("ppo.probe_per_tier", count(0), 10, "probe episodes per tier"),
        key("eval.episodes_per_tier", count(1), b.episodes_per_tier, "episodes per tier, split and seed"),
        key("eval.tiers", Kind::ChoiceList(TIERS), "easy,medium,hard", "evaluated tiers"),
        key("eval.threshold_m", positive(), b.threshold_m, "success radius, meters"),
        key("eval.seeds", Kind::IntList { min: 0 }, "1,2,3", "evaluation seeds"),
        key("eval.keep_logs", Kind::Bool, b.keep_logs, "write per-episode trajectory logs"),
        key("eval.model", Kind::Choice(EVAL_MODELS), "rl", "evaluated agent"),
        key("sweep.lambda_rl", Kind::FloatList { len: None, min: 0.0, max: 1.0 }, "0,0.1,0.2,0.3", "λ_RL values of the sweep"),
        key("sweep.drop", Kind::ChoiceList(&CHANNEL_NAMES), "landmark_prior", "map channels ablated one at a time"),
        key("sweep.flat", Kind::Bool, true, "include the flat-controller variant"),
        key("sweep.train_seeds", Kind::IntList { min: 0 }, "0,1,2", "training seeds per variant"),
    ]
}

fn range_text(spec: &KeySpec) -> String {
    if !spec.range.is_empty() {
        return spec.range.to_string();
    }
    let num = |v: f64| {
        if v.is_infinite() {
            if v > 0.0 {
                "inf".to_string()
            } else {
                "-inf".to_string()
            }
        } else {
            v.to_string()
        }
    };
    match &spec.kind {
        Kind::Int { min, max } if *max == i64::MAX => format!("{} >= {min}", spec.key),
        Kind::Int { min, max } => format!("{} ∈ [{min},{max}]", spec.key),
        Kind::Float { min, min_open, max, max_open } => {
            format!("{} ∈ {}{},{}{}", spec.key, if *min_open { "(" } else { "[" }, num(*min), num(*max), if *max_open { ")" } else { "]" })
        }
        Kind::FloatList { min, max, .. } => format!("every {} value ∈ [{},{}]", spec.key, num(*min), num(*max)),
        Kind::IntList { min } => format!("every {} value >= {min}", spec.key),
        Kind::Choice(c) | Kind::ChoiceList(c) => format!("{} ∈ {{{}}}", spec.key, c.join(",")),
        Kind::Bool => format!("{} ∈ {{true,false}}", spec.key),
        Kind::Text => spec.key.to_string(),
    }
}

fn check_float(v: f64, min: f64, min_open: bool, max: f64, max_open: bool) -> bool {
    let lo = if min_open { v > min } else { v >= min };
    let hi = if max_open { v < max } else { v <= max };
    v.is_finite() && lo && hi
}

fn items(value: &str) -> impl Iterator<Item = &str> {
    value.split(',').map(str::trim).filter(|s| !s.is_empty())
}

/// Checks `value` against the key's type and range and returns its canonical text.
fn check_value(spec: &KeySpec, value: &str) -> std::result::Result<String, String> {
    let value = value.trim();
    let out_of_range = |v: &str| format!("{} = {v} is out of range: {}", spec.key, range_text(spec));
    let type_error = |what: &str| format!("{} expects {what}, got {value:?}", spec.key);
    match &spec.kind {
        Kind::Int { min, max } => {
            let v: i64 = value.parse().map_err(|_| type_error("an integer"))?;
            if v < *min || v > *max {
                return Err(out_of_range(value));
            }
            Ok(v.to_string())
        }
        Kind::Float { min, min_open, max, max_open } => {
            let v: f64 = value.parse().map_err(|_| type_error("a number"))?;
            if !check_float(v, *min, *min_open, *max, *max_open) {
                return Err(out_of_range(value));
            }
            Ok(v.to_string())
        }
        Kind::Bool => match value {
            "true" | "false" => Ok(value.to_string()),
            _ => Err(type_error("true or false")),
        },
        Kind::Choice(c) => {
            if c.contains(&value) {
                Ok(value.to_string())
            } else {
                Err(out_of_range(value))
            }
        }
        Kind::FloatList { len, min, max } => {
            let mut out = Vec::new();
            for s in items(value) {
                let v: f64 = s.parse().map_err(|_| type_error("a comma-separated list of numbers"))?;
                if !check_float(v, *min, false, *max, false) {
                    return Err(out_of_range(s));
                }
                out.push(v);
            }
            if let Some(n) = len {
                if out.len() != *n {
                    return Err(format!("{} expects {n} values, got {}", spec.key, out.len()));
                }
            }
            Ok(list(&out))
        }
        Kind::IntList { min } => {
            let mut out = Vec::new();
            for s in items(value) {
                let v: i64 = s.parse().map_err(|_| type_error("a comma-separated list of integers"))?;
                if v < *min {
                    return Err(out_of_range(s));
                }
                out.push(v);
            }
            Ok(list(&out))
        }
        Kind::ChoiceList(c) => {
            let mut out = Vec::new();
            for s in items(value) {
                if !c.contains(&s) {
                    return Err(out_of_range(s));
                }
                out.push(s);
            }
            Ok(out.join(","))
        }
        Kind::Text => Ok(value.to_string()),
    }
}

/// Fully resolved settings: defaults, then file values, then overrides.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    values: BTreeMap<String, String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self { values: schema().into_iter().map(|s| (s.key.to_string(), s.default)).collect() }
    }
}

fn split_assignment(line: &str) -> Option<(&str, &str)> {
    let (k, v) = line.split_once('=')?;
    Some((k.trim(), v.trim()))
}

impl ExperimentConfig {
    /// Sets one key after checking it against the schema; `origin` prefixes errors.
    pub fn set(&mut self, key: &str, value: &str, origin: &str) -> Result<()> {
        let spec = schema().into_iter().find(|s| s.key == key).ok_or_else(|| Error::Config(format!("{origin}: unknown key {key:?}")))?;
        let v = check_value(&spec, value).map_err(|m| Error::Config(format!("{origin}: {m}")))?;
        self.values.insert(key.to_string(), v);
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, source: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let origin = format!("{source} line {}: {:?}", i + 1, raw.trim());
            let (k, v) = split_assignment(line).ok_or_else(|| Error::Config(format!("{origin}: expected key = value")))?;
            self.set(k, v, &origin)?;
        }
        Ok(())
    }

    /// Applies command-line `key=value` overrides.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref();
            let origin = format!("override {o:?}");
            let (k, v) = split_assignment(o).ok_or_else(|| Error::Config(format!("{origin}: expected key=value")))?;
            self.set(k, v, &origin)?;
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_else(|| panic!("{key} is not a schema key"))
    }

    pub fn f64(&self, key: &str) -> f64 {
        self.get(key).parse().expect("validated number")
    }

    pub fn usize(&self, key: &str) -> usize {
        self.get(key).parse().expect("validated count")
    }

    pub fn u64(&self, key: &str) -> u64 {
        self.get(key).parse().expect("validated count")
    }

    pub fn i32(&self, key: &str) -> i32 {
        self.get(key).parse().expect("validated integer")
    }

    pub fn bool(&self, key: &str) -> bool {
        self.get(key) == "true"
    }

    pub fn f64_list(&self, key: &str) -> Vec<f64> {
        items(self.get(key)).map(|s| s.parse().expect("validated number")).collect()
    }

    pub fn u64_list(&self, key: &str) -> Vec<u64> {
        items(self.get(key)).map(|s| s.parse().expect("validated integer")).collect()
    }

    pub fn str_list(&self, key: &str) -> Vec<&str> {
        items(self.get(key)).collect()
    }

    pub fn seed(&self) -> u64 {
        self.u64("run.seed")
    }

    pub fn workers(&self) -> usize {
        self.usize("run.workers")
    }

    pub fn out_dir(&self) -> &Path {
        Path::new(self.get("run.out"))
    }

    /// Every key as `key = value`, sorted.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.values {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// Hex SHA-256 of [`Self::to_text`].
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn world_config(&self) -> WorldConfig {
        WorldConfig {
            width: self.usize("world.width"),
            height: self.usize("world.height"),
            cell_size: self.f64("world.cell_size"),
            z_min: self.i32("world.z_min"),
            z_max: self.i32("world.z_max"),
            cruise_alt: self.i32("world.cruise_alt"),
            r_base: self.i32("world.r_base"),
            r_gain: self.i32("world.r_gain"),
            landmarks: self.usize("world.landmarks"),
            landmark_radius_min: self.i32("world.landmark_radius_min"),
            landmark_radius_max: self.i32("world.landmark_radius_max"),
            landmark_spacing: self.f64("world.landmark_spacing"),
            obstacle_density: self.f64("world.obstacle_density"),
            building_min: self.usize("world.building_min"),
            building_max: self.usize("world.building_max"),
            tall_fraction: self.f64("world.tall_fraction"),
            max_retries: self.usize("world.max_retries"),
        }
    }

    pub fn episode_config(&self) -> EpisodeConfig {
        let t = self.f64_list("episode.tier_bounds");
        let b = self.f64_list("episode.band_bounds");
        EpisodeConfig {
            tier_bounds: [t[0], t[1], t[2]],
            band_bounds: [b[0], b[1], b[2], b[3]],
            budget_factor: self.f64("episode.budget_factor"),
            tags: self.usize("episode.tags"),
            max_retries: self.usize("episode.max_retries"),
        }
    }

    pub fn prior_config(&self) -> PriorConfig {
        PriorConfig { radius: self.f64("prior.radius"), inside: self.f64("prior.inside"), outside: self.f64("prior.outside") }
    }

    pub fn reward_config(&self) -> RewardConfig {
        RewardConfig {
            alpha: self.f64("reward.alpha"),
            beta: self.f64("reward.beta"),
            eta: self.f64("reward.eta"),
            delta: self.f64("reward.delta"),
            d_goal: self.f64("reward.d_goal"),
            r_min: self.f64("reward.r_min"),
            r_max: self.f64("reward.r_max"),
            heading_reference: self.get("reward.heading_reference").parse().expect("validated choice"),
        }
    }

    pub fn demo_config(&self) -> DemoConfig {
        DemoConfig {
            reward: self.reward_config(),
            gamma: self.f64("teacher.gamma"),
            prior: self.prior_config(),
            waypoints: WaypointConfig { s_max: self.f64("teacher.s_max"), r_anchor: self.f64("teacher.r_anchor"), dedupe: self.f64("teacher.dedupe") },
            eps_wp: self.f64("model.eps_wp"),
            progress: self.get("teacher.progress").parse().expect("validated choice"),
        }
    }

    fn tiers(&self, key: &str) -> Vec<Difficulty> {
        self.str_list(key).into_iter().map(|s| s.parse().expect("validated tier")).collect()
    }

    pub fn dataset_config(&self) -> DatasetConfig {
        DatasetConfig { episodes: self.usize("corpus.episodes"), tiers: self.tiers("corpus.tiers"), episode: self.episode_config(), demo: self.demo_config() }
    }

    fn channels(&self, key: &str) -> Vec<usize> {
        self.str_list(key).into_iter().map(|s| CHANNEL_NAMES.iter().position(|c| *c == s).expect("validated channel")).collect()
    }

    /// Model layout for worlds of the configured size.
    pub fn policy_config(&self) -> PolicyConfig {
        let w = self.world_config();
        let patch = 2 * (w.r_base + w.r_gain * w.z_max) as usize + 1;
        let mut m = PolicyConfig::new(EnvDims { width: w.width, height: w.height, z_max: w.z_max, patch });
        m.encoder = EncoderConfig { c0: self.usize("model.c0"), stages: self.usize("model.stages"), d: self.usize("model.map_dim") };
        m.obs_channels = self.usize("model.obs_channels");
        m.obs_dim = self.usize("model.obs_dim");
        m.state_dim = self.usize("model.state_dim");
        m.embed_dim = self.usize("model.embed_dim");
        m.desc_dim = self.usize("model.desc_dim");
        m.hidden = self.usize("model.hidden");
        m.actor_hidden = self.usize("model.actor_hidden");
        m.max_landmarks = self.usize("model.max_landmarks");
        m.tags = self.usize("episode.tags");
        m.goal_to_planner = self.bool("model.goal_to_planner");
        m.flat = self.bool("model.flat");
        m.eps_wp = self.f64("model.eps_wp");
        m.context_scale = self.f64("model.context_scale");
        m.drop_channels = self.channels("model.drop_channels");
        m
    }

    pub fn stage1_config(&self) -> Stage1Config {
        Stage1Config {
            epochs: self.usize("il.epochs"),
            batch_size: self.usize("il.batch_size"),
            optimizer: AdamConfig { lr: self.f64("il.lr"), weight_decay: self.f64("il.weight_decay"), ..AdamConfig::default() },
            lambda_bc: self.f64("il.lambda_bc"),
            lambda_wp: self.f64("il.lambda_wp"),
            context_noise: self.f64("il.context_noise"),
            grad_clip: self.f64("il.grad_clip"),
            seed: self.seed(),
        }
    }

    pub fn ppo_config(&self) -> PpoConfig {
        PpoConfig {
            gamma: self.f64("ppo.gamma"),
            lambda_gae: self.f64("ppo.lambda_gae"),
            clip_eps: self.f64("ppo.clip_eps"),
            lambda_rl: self.f64("ppo.lambda_rl"),
            rollout_steps: self.usize("ppo.rollout_steps"),
            epochs_per_update: self.usize("ppo.epochs_per_update"),
            minibatch_size: self.usize("ppo.minibatch_size"),
            expert_batch: self.usize("ppo.expert_batch"),
            optimizer: AdamConfig::with_lr(self.f64("ppo.lr")),
            entropy_coef: self.f64("ppo.entropy_coef"),
            value_coef: self.f64("ppo.value_coef"),
            max_updates: self.usize("ppo.max_updates"),
            grad_clip: self.f64("ppo.grad_clip"),
            stop_bootstrap: self.get("ppo.stop_bootstrap").parse().expect("validated choice"),
            truncation_bootstrap: self.bool("ppo.truncation_bootstrap"),
            warm_start: self.bool("ppo.warm_start"),
            freeze_map_encoder: self.bool("ppo.freeze_map_encoder"),
            freeze_goal_heads: self.bool("ppo.freeze_goal_heads"),
            probe_every: self.usize("ppo.probe_every"),
            seed: self.seed(),
            workers: self.workers(),
        }
    }

    pub fn benchmark_config(&self) -> BenchmarkConfig {
        BenchmarkConfig {
            episodes_per_tier: self.usize("eval.episodes_per_tier"),
            tiers: self.tiers("eval.tiers"),
            episode: self.episode_config(),
            prior: self.prior_config(),
            threshold_m: self.f64("eval.threshold_m"),
            workers: self.workers(),
            keep_logs: self.bool("eval.keep_logs"),
        }
    }

    pub fn ablation_axes(&self) -> AblationAxes {
        AblationAxes { lambda_rl: self.f64_list("sweep.lambda_rl"), drop_channels: self.channels("sweep.drop"), flat: self.bool("sweep.flat") }
    }

    /// Cross-key checks that single-key ranges cannot express.
    pub fn validate(&self) -> Result<()> {
        self.world_config().validate()?;
        self.episode_config().validate()?;
        self.reward_config().validate()?;
        self.ppo_config().validate()?;
        self.policy_config().validate()?;
        if self.usize("model.max_landmarks") < self.usize("world.landmarks") {
            return Err(Error::Config(format!("model.max_landmarks ({}) must be >= world.landmarks ({})", self.get("model.max_landmarks"), self.get("world.landmarks"))));
        }
        for key in ["corpus.tiers", "eval.tiers", "eval.seeds", "sweep.train_seeds"] {
            if self.str_list(key).is_empty() {
                return Err(Error::Config(format!("{key} must not be empty")));
            }
        }
        Ok(())
    }
}

/// Resolves defaults, then the file (when given), then `overrides`.
pub fn parse_config<S: AsRef<str>>(file: Option<&Path>, overrides: &[S]) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        cfg.apply_text(&text, &path.display().to_string())?;
    }
    cfg.apply_overrides(overrides)?;
    cfg.validate()?;
    Ok(cfg)
}
