use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::mapper::{pad_odd, EncoderConfig, MapEncoder};
use crate::numerics::{BnPass, Checkpoint, Graph, NumericsError, ParamId, ParamStore, Tensor, Var};
use crate::rng::{substream, Rng};
use crate::world::{Band, GoalDescriptor, Heading, Sector, UavState, NUM_ACTIONS, OBS_CHANNELS};

/// Width of the pose feature tuple `(x/W, y/H, z/z_max, one-hot heading)`.
pub const POSE_FEATURES: usize = 7;
/// Ego-frame waypoint context: `(forward, lateral, distance)` over the scale,
/// then the direction `(forward, lateral) / max(distance, 1)`.
pub const WAYPOINT_CONTEXT: usize = 5;

/// Grid geometry a model is built for.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EnvDims {
    pub width: usize,
    pub height: usize,
    pub z_max: i32,
    pub patch: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyConfig {
    pub dims: EnvDims,
    pub encoder: EncoderConfig,
    pub obs_channels: usize,
    pub obs_dim: usize,
    pub state_dim: usize,
    pub embed_dim: usize,
    pub desc_dim: usize,
    pub hidden: usize,
    pub actor_hidden: usize,
    pub max_landmarks: usize,
    pub tags: usize,
    /// Feed the predicted goal into the waypoint head.
    pub goal_to_planner: bool,
    /// Bypass the planner: the actor is conditioned on the goal directly.
    pub flat: bool,
    /// Replanning radius, cells.
    pub eps_wp: f64,
    /// Normalizer of the actor's waypoint context, cells.
    pub context_scale: f64,
    /// Map channels zeroed at the encoder input.
    pub drop_channels: Vec<usize>,
}

impl PolicyConfig {
    pub fn new(dims: EnvDims) -> Self {
        Self {
            dims,
            encoder: EncoderConfig::default(),
            obs_channels: 8,
            obs_dim: 32,
            state_dim: 16,
            embed_dim: 8,
            desc_dim: 16,
            hidden: 64,
            actor_hidden: 64,
            max_landmarks: 16,
            tags: 4,
            goal_to_planner: true,
            flat: false,
            eps_wp: 1.5,
            context_scale: 12.0,
            drop_channels: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.dims;
        if d.width == 0 || d.height == 0 || d.patch == 0 || d.z_max <= 0 {
            return Err(Error::Config(format!("invalid model dimensions {d:?}")));
        }
        if !(self.eps_wp > 0.0) || !(self.context_scale > 0.0) {
            return Err(Error::Config("model.eps_wp and model.context_scale must be positive".into()));
        }
        if let Some(c) = self.drop_channels.iter().find(|&&c| c >= crate::mapper::MAP_CHANNELS) {
            return Err(Error::Config(format!("drop channel {c} does not exist")));
        }
        let sizes = [self.obs_channels, self.obs_dim, self.state_dim, self.embed_dim, self.desc_dim, self.hidden, self.actor_hidden, self.max_landmarks, self.tags];
        if sizes.contains(&0) {
            return Err(Error::Config("model layer sizes must be >= 1".into()));
        }
        Ok(())
    }

    fn to_meta(&self, meta: &mut BTreeMap<String, String>) {
        let d = &self.dims;
        let mut put = |k: &str, v: String| {
            meta.insert(format!("model.{k}"), v);
        };
        put("width", d.width.to_string());
        put("height", d.height.to_string());
        put("z_max", d.z_max.to_string());
        put("patch", d.patch.to_string());
        put("c0", self.encoder.c0.to_string());
        put("stages", self.encoder.stages.to_string());
        put("map_dim", self.encoder.d.to_string());
        put("obs_channels", self.obs_channels.to_string());
        put("obs_dim", self.obs_dim.to_string());
        put("state_dim", self.state_dim.to_string());
        put("embed_dim", self.embed_dim.to_string());
        put("desc_dim", self.desc_dim.to_string());
        put("hidden", self.hidden.to_string());
        put("actor_hidden", self.actor_hidden.to_string());
        put("max_landmarks", self.max_landmarks.to_string());
        put("tags", self.tags.to_string());
        put("goal_to_planner", self.goal_to_planner.to_string());
        put("flat", self.flat.to_string());
        put("eps_wp", format!("{:e}", self.eps_wp));
        put("context_scale", format!("{:e}", self.context_scale));
        put("drop_channels", self.drop_channels.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(","));
    }

    fn from_meta(meta: &BTreeMap<String, String>) -> Result<Self> {
        fn get<T: std::str::FromStr>(meta: &BTreeMap<String, String>, k: &str) -> Result<T> {
            let v = meta.get(&format!("model.{k}")).ok_or_else(|| Error::Contract(format!("checkpoint lacks model.{k}")))?;
            v.parse().map_err(|_| Error::Contract(format!("checkpoint has bad model.{k} = {v:?}")))
        }
        let dims = EnvDims { width: get(meta, "width")?, height: get(meta, "height")?, z_max: get(meta, "z_max")?, patch: get(meta, "patch")? };
        let drop: String = get(meta, "drop_channels")?;
        let drop_channels = drop.split(',').filter(|s| !s.is_empty()).map(|s| s.parse().map_err(|_| Error::Contract(format!("bad drop channel {s:?}")))).collect::<Result<_>>()?;
        Ok(Self {
            dims,
            encoder: EncoderConfig { c0: get(meta, "c0")?, stages: get(meta, "stages")?, d: get(meta, "map_dim")? },
            obs_channels: get(meta, "obs_channels")?,
            obs_dim: get(meta, "obs_dim")?,
            state_dim: get(meta, "state_dim")?,
            embed_dim: get(meta, "embed_dim")?,
            desc_dim: get(meta, "desc_dim")?,
            hidden: get(meta, "hidden")?,
            actor_hidden: get(meta, "actor_hidden")?,
            max_landmarks: get(meta, "max_landmarks")?,
            tags: get(meta, "tags")?,
            goal_to_planner: get(meta, "goal_to_planner")?,
            flat: get(meta, "flat")?,
            eps_wp: get(meta, "eps_wp")?,
            context_scale: get(meta, "context_scale")?,
            drop_channels,
        })
    }
}

#[derive(Clone, Copy, Debug)]
struct Dense {
    w: ParamId,
    b: ParamId,
}

impl Dense {
    fn new(store: &mut ParamStore, name: &str, din: usize, dout: usize, rng: &mut Rng) -> Result<Self, NumericsError> {
        let w = store.add_uniform(&format!("{name}.w"), &[din, dout], din, rng)?;
        let b = store.add_const(&format!("{name}.b"), &[dout], 0.0)?;
        Ok(Self { w, b })
    }

    fn apply(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var, NumericsError> {
        let (w, b) = (g.param(store, self.w), g.param(store, self.b));
        g.linear(x, w, b)
    }

    fn ids(&self) -> [ParamId; 2] {
        [self.w, self.b]
    }
}

#[derive(Clone, Copy, Debug)]
struct ConvLayer {
    k: ParamId,
    b: ParamId,
    stride: usize,
}

impl ConvLayer {
    fn new(store: &mut ParamStore, name: &str, cin: usize, cout: usize, stride: usize, rng: &mut Rng) -> Result<Self, NumericsError> {
        let k = store.add_uniform(&format!("{name}.w"), &[cout, cin, 3, 3], cin * 9, rng)?;
        let b = store.add_const(&format!("{name}.b"), &[cout], 0.0)?;
        Ok(Self { k, b, stride })
    }

    fn apply(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var, NumericsError> {
        let x = if self.stride > 1 { pad_odd(g, x)? } else { x };
        let k = g.param(store, self.k);
        let y = g.conv2d(x, k, self.stride, 1)?;
        let b = g.param(store, self.b);
        let y = g.channel_bias(y, b)?;
        g.relu(y)
    }
}

fn strided(n: usize) -> usize {
    let n = n + (n + 1) % 2;
    (n - 1) / 2 + 1
}

/// Model inputs for a batch of `N` decision points.
#[derive(Clone, Debug)]
pub struct PolicyBatch {
    /// `[N, 6, H, W]` encoder input; may be omitted when map features are supplied.
    pub maps: Option<Tensor>,
    /// `[N, 3, P, P]` heading-aligned patches (see [`ego_patch`]).
    pub obs: Tensor,
    /// `[N, 7]`.
    pub pose: Tensor,
    pub descriptors: Vec<GoalDescriptor>,
    /// `[N, 3]`.
    pub waypoint_context: Tensor,
}

/// Graph nodes of the context and head pass. Goal and waypoint are in
/// normalized coordinates, the value in standardized units.
#[derive(Clone, Copy, Debug)]
pub struct HeadVars {
    pub map_feature: Var,
    pub state_feature: Var,
    pub goal: Var,
    pub progress: Var,
    pub value_std: Var,
    pub waypoint: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct ForwardVars {
    pub heads: HeadVars,
    pub logits: Var,
}

/// Decoded head outputs for one decision point, in cells.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HeadOutputs {
    pub goal: (f64, f64),
    pub progress: f64,
    pub value: f64,
    pub waypoint: (f64, f64),
    pub logits: [f64; NUM_ACTIONS],
}

/// All learnable parameters: map, observation and pose encoders, descriptor
/// embeddings, fusion trunk and the goal, progress, value, waypoint and
/// action heads.
#[derive(Clone, Debug)]
pub struct Policy {
    pub cfg: PolicyConfig,
    pub store: ParamStore,
    /// Value head output is `value_mean + value_std * u`.
    pub value_mean: f64,
    pub value_std: f64,
    map: MapEncoder,
    obs_convs: [ConvLayer; 3],
    obs_out: Dense,
    state_enc: Dense,
    tables: [ParamId; 4],
    desc: Dense,
    trunk: [Dense; 2],
    goal_head: Dense,
    progress_head: Dense,
    value_head: Dense,
    waypoint_head: Dense,
    actor: [Dense; 2],
}

impl Policy {
    pub fn new(cfg: PolicyConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng: Rng = substream(seed, "policy-init", 0);
        let mut store = ParamStore::new();
        let s = &mut store;
        let map = MapEncoder::new(s, "map", &cfg.encoder, &mut rng)?;
        let c = cfg.obs_channels;
        let obs_convs =
            [ConvLayer::new(s, "obs.conv0", OBS_CHANNELS, c, 1, &mut rng)?, ConvLayer::new(s, "obs.conv1", c, 2 * c, 2, &mut rng)?, ConvLayer::new(s, "obs.conv2", 2 * c, 2 * c, 2, &mut rng)?];
        let side = strided(strided(cfg.dims.patch));
        let obs_out = Dense::new(s, "obs.out", 2 * c * side * side, cfg.obs_dim, &mut rng)?;
        let state_enc = Dense::new(s, "state", POSE_FEATURES, cfg.state_dim, &mut rng)?;
        let e = cfg.embed_dim;
        let mut table = |name: &str, rows: usize, rng: &mut Rng| -> Result<ParamId, NumericsError> {
            let data = (0..rows * e).map(|_| rand::Rng::gen_range(rng, -1.0..1.0)).collect();
            s.add(&format!("desc.{name}"), Tensor::new(vec![rows, e], data)?, true)
        };
        let tables = [table("landmark", cfg.max_landmarks, &mut rng)?, table("sector", Sector::COUNT, &mut rng)?, table("band", Band::COUNT, &mut rng)?, table("tag", cfg.tags, &mut rng)?];
        let desc = Dense::new(&mut store, "desc.proj", 4 * e, cfg.desc_dim, &mut rng)?;
        let s = &mut store;
        let fused = cfg.encoder.d + cfg.state_dim + cfg.desc_dim;
        let trunk = [Dense::new(s, "trunk0", fused, cfg.hidden, &mut rng)?, Dense::new(s, "trunk1", cfg.hidden, cfg.hidden, &mut rng)?];
        let goal_head = Dense::new(s, "head.goal", cfg.hidden, 2, &mut rng)?;
        let progress_head = Dense::new(s, "head.progress", cfg.hidden, 1, &mut rng)?;
        let value_head = Dense::new(s, "head.value", cfg.hidden, 1, &mut rng)?;
        let wp_in = cfg.hidden + if cfg.goal_to_planner { 2 } else { 0 };
        let waypoint_head = Dense::new(s, "head.waypoint", wp_in, 2, &mut rng)?;
        let actor_in = cfg.obs_dim + cfg.state_dim + WAYPOINT_CONTEXT;
        let actor = [Dense::new(s, "actor0", actor_in, cfg.actor_hidden, &mut rng)?, Dense::new(s, "actor1", cfg.actor_hidden, NUM_ACTIONS, &mut rng)?];
        // Centered goal and waypoint outputs at initialization.
        for head in [goal_head, waypoint_head] {
            store.value_mut(head.b).data_mut().iter_mut().for_each(|v| *v = 0.5);
        }
        Ok(Self { cfg, store, value_mean: 0.0, value_std: 1.0, map, obs_convs, obs_out, state_enc, tables, desc, trunk, goal_head, progress_head, value_head, waypoint_head, actor })
    }

    pub fn set_value_normalization(&mut self, mean: f64, std: f64) -> Result<()> {
        if !mean.is_finite() || !(std > 0.0) || !std.is_finite() {
            return Err(Error::Numerical(format!("invalid value normalization ({mean}, {std})")));
        }
        self.value_mean = mean;
        self.value_std = std;
        Ok(())
    }

    /// Parameter blocks of the map encoder.
    pub fn map_param_ids(&self) -> Vec<ParamId> {
        self.map.param_ids()
    }

    /// Parameter blocks of the value output layer.
    pub fn value_head_ids(&self) -> Vec<ParamId> {
        self.value_head.ids().to_vec()
    }

    /// Parameter blocks grouped by the head they feed, for gradient audits.
    pub fn head_param_ids(&self) -> [(&'static str, Vec<ParamId>); 5] {
        [
            ("goal", self.goal_head.ids().to_vec()),
            ("progress", self.progress_head.ids().to_vec()),
            ("value", self.value_head.ids().to_vec()),
            ("waypoint", self.waypoint_head.ids().to_vec()),
            ("action", self.actor.iter().flat_map(|d| d.ids()).collect()),
        ]
    }

    pub fn state_encoder_ids(&self) -> Vec<ParamId> {
        self.state_enc.ids().to_vec()
    }

    pub fn descriptor_table_ids(&self) -> Vec<ParamId> {
        self.tables.to_vec()
    }

    /// Re-initializes the value output layer and resets its normalization.
    pub fn reset_value_head(&mut self, seed: u64) -> Result<()> {
        let mut rng: Rng = substream(seed, "value-reset", 0);
        let h = self.cfg.hidden;
        let bound = 1.0 / (h as f64).sqrt();
        for v in self.store.value_mut(self.value_head.w).data_mut() {
            *v = rand::Rng::gen_range(&mut rng, -bound..bound);
        }
        self.store.value_mut(self.value_head.b).data_mut().iter_mut().for_each(|v| *v = 0.0);
        self.value_mean = 0.0;
        self.value_std = 1.0;
        Ok(())
    }

    /// `[N, 6, H, W]` encoder input to `[N, d]` map features.
    pub fn map_feature(&self, g: &mut Graph, maps: Var, pass: &mut BnPass) -> Result<Var> {
        Ok(self.map.forward(g, &self.store, maps, pass)?)
    }

    /// `[N, 3, P, P]` to `[N, obs_dim]`.
    pub fn observation_feature(&self, g: &mut Graph, obs: Var) -> Result<Var> {
        let mut h = obs;
        for conv in &self.obs_convs {
            h = conv.apply(g, &self.store, h)?;
        }
        let n = g.value(h).shape()[0];
        let flat_len = g.value(h).len() / n.max(1);
        let flat = g.reshape(h, &[n, flat_len])?;
        let y = self.obs_out.apply(g, &self.store, flat)?;
        Ok(g.relu(y)?)
    }

    /// Encoded pose features, `[N, state_dim]`.
    pub fn state_feature(&self, g: &mut Graph, pose: Var) -> Result<Var> {
        let y = self.state_enc.apply(g, &self.store, pose)?;
        Ok(g.relu(y)?)
    }

    /// Concatenated embeddings through one affine layer, `[N, desc_dim]`.
    pub fn descriptor_feature(&self, g: &mut Graph, descriptors: &[GoalDescriptor]) -> Result<Var> {
        let cols: [Vec<usize>; 4] = [
            descriptors.iter().map(|d| d.landmark_id).collect(),
            descriptors.iter().map(|d| d.sector.index()).collect(),
            descriptors.iter().map(|d| d.band.index()).collect(),
            descriptors.iter().map(|d| d.tag).collect(),
        ];
        let mut parts = Vec::with_capacity(4);
        for (table, ids) in self.tables.iter().zip(&cols) {
            let t = g.param(&self.store, *table);
            parts.push(g.embedding(t, ids).map_err(|e| Error::Contract(format!("goal descriptor out of range: {e}")))?);
        }
        let cat = g.concat(&parts)?;
        Ok(self.desc.apply(g, &self.store, cat)?)
    }

    /// Encoders, fusion trunk and the goal, progress, value and waypoint heads.
    /// `map_feature` replaces the map encoder when given.
    pub fn forward_heads(&self, g: &mut Graph, batch: &PolicyBatch, map_feature: Option<Var>, pass: &mut BnPass) -> Result<HeadVars> {
        let map_feature = match map_feature {
            Some(v) => v,
            None => {
                let maps = batch.maps.clone().ok_or_else(|| Error::Contract("policy batch has neither maps nor map features".into()))?;
                let x = g.constant(maps);
                self.map_feature(g, x, pass)?
            }
        };
        let pose = g.constant(batch.pose.clone());
        let state_feature = self.state_feature(g, pose)?;
        let desc = self.descriptor_feature(g, &batch.descriptors)?;
        let mut h = g.concat(&[map_feature, state_feature, desc])?;
        for layer in &self.trunk {
            let y = layer.apply(g, &self.store, h)?;
            h = g.relu(y)?;
        }
        let goal = self.goal_head.apply(g, &self.store, h)?;
        let p = self.progress_head.apply(g, &self.store, h)?;
        let progress = g.sigmoid(p)?;
        let value_std = self.value_head.apply(g, &self.store, h)?;
        let wp_in = if self.cfg.goal_to_planner { g.concat(&[h, goal])? } else { h };
        let waypoint = self.waypoint_head.apply(g, &self.store, wp_in)?;
        Ok(HeadVars { map_feature, state_feature, goal, progress, value_std, waypoint })
    }

    /// Heads plus action logits from `batch.waypoint_context`.
    pub fn forward(&self, g: &mut Graph, batch: &PolicyBatch, map_feature: Option<Var>, pass: &mut BnPass) -> Result<ForwardVars> {
        let heads = self.forward_heads(g, batch, map_feature, pass)?;
        let obs = g.constant(batch.obs.clone());
        let logits = self.actor_logits(g, obs, heads.state_feature, batch.waypoint_context.clone())?;
        Ok(ForwardVars { heads, logits })
    }

    /// MicroActor: observation, pose and waypoint context only.
    pub fn actor_logits(&self, g: &mut Graph, obs: Var, state_feature: Var, context: Tensor) -> Result<Var> {
        let o = self.observation_feature(g, obs)?;
        let c = g.constant(context);
        let x = g.concat(&[o, state_feature, c])?;
        let h = self.actor[0].apply(g, &self.store, x)?;
        let h = g.relu(h)?;
        Ok(self.actor[1].apply(g, &self.store, h)?)
    }

    /// Decodes row `i` of a forward pass into cells and raw values.
    pub fn decode(&self, g: &Graph, heads: &HeadVars, logits: Var, i: usize) -> HeadOutputs {
        let (w, h) = (self.cfg.dims.width as f64, self.cfg.dims.height as f64);
        let goal = g.value(heads.goal).data();
        let wp = g.value(heads.waypoint).data();
        let mut out = [0.0; NUM_ACTIONS];
        out.copy_from_slice(&g.value(logits).data()[i * NUM_ACTIONS..(i + 1) * NUM_ACTIONS]);
        HeadOutputs {
            goal: (goal[2 * i] * w, goal[2 * i + 1] * h),
            progress: g.value(heads.progress).data()[i],
            value: self.value_mean + self.value_std * g.value(heads.value_std).data()[i],
            waypoint: (wp[2 * i] * w, wp[2 * i + 1] * h),
            logits: out,
        }
    }

    pub fn fingerprint(&self) -> String {
        format!("{}:{:e}:{:e}", self.store.fingerprint(), self.value_mean, self.value_std)
    }

    pub fn to_checkpoint(&self, mut meta: BTreeMap<String, String>, adam: Option<crate::numerics::AdamState>) -> Checkpoint {
        self.cfg.to_meta(&mut meta);
        meta.insert("value.mean".into(), format!("{:e}", self.value_mean));
        meta.insert("value.std".into(), format!("{:e}", self.value_std));
        Checkpoint { meta, params: self.store.clone(), adam }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let cfg = PolicyConfig::from_meta(&ck.meta)?;
        let mut p = Self::new(cfg, 0)?;
        let same = p.store.len() == ck.params.len() && p.store.blocks().iter().zip(ck.params.blocks()).all(|(a, b)| a.name == b.name && a.value.shape() == b.value.shape());
        if !same {
            return Err(Error::Contract("checkpoint parameters do not match the model layout".into()));
        }
        p.store = ck.params.clone();
        let num = |k: &str| -> Result<f64> { ck.meta.get(k).and_then(|v| v.parse().ok()).ok_or_else(|| Error::Contract(format!("checkpoint lacks {k}"))) };
        p.set_value_normalization(num("value.mean")?, num("value.std")?)?;
        Ok(p)
    }
}

/// `(x/W, y/H, z/z_max, one-hot heading)`.
pub fn pose_features(state: &UavState, dims: &EnvDims) -> [f64; POSE_FEATURES] {
    let mut f = [0.0; POSE_FEATURES];
    f[0] = state.x as f64 / dims.width as f64;
    f[1] = state.y as f64 / dims.height as f64;
    f[2] = state.z as f64 / dims.z_max as f64;
    f[3 + state.heading.index()] = 1.0;
    f
}

/// Target offset in the UAV frame: along the heading, to its left and the
/// Euclidean distance, each divided by `scale`, followed by the direction
/// normalized by `max(distance, 1)` so it fades out within a cell of the target.
pub fn waypoint_context(state: &UavState, target: (f64, f64), scale: f64) -> [f64; WAYPOINT_CONTEXT] {
    let (dx, dy) = (target.0 - state.x as f64, target.1 - state.y as f64);
    let (hx, hy) = state.heading.delta();
    let (hx, hy) = (hx as f64, hy as f64);
    let forward = dx * hx + dy * hy;
    let lateral = -dx * hy + dy * hx;
    let d = (dx * dx + dy * dy).sqrt();
    let n = d.max(1.0);
    [forward / scale, lateral / scale, d / scale, forward / n, lateral / n]
}

/// Rotates a world-aligned `[C, P, P]` patch so that the heading points along
/// +column and its left along +row; East is the identity.
pub fn ego_patch(patch: &Tensor, heading: Heading) -> Tensor {
    let shape = patch.shape();
    let (c, p) = (shape[0], shape[1]);
    let r = (p as i32 - 1) / 2;
    let (hx, hy) = heading.delta();
    let src = patch.data();
    let mut out = vec![0.0; src.len()];
    for l in -r..=r {
        for f in -r..=r {
            let (dx, dy) = (f * hx - l * hy, f * hy + l * hx);
            let from = ((dy + r) as usize) * p + (dx + r) as usize;
            let to = ((l + r) as usize) * p + (f + r) as usize;
            for ch in 0..c {
                out[ch * p * p + to] = src[ch * p * p + from];
            }
        }
    }
    Tensor::new(shape.to_vec(), out).expect("same shape")
}

/// Clamps a waypoint into the grid.
pub fn clamp_to_grid(p: (f64, f64), dims: &EnvDims) -> (f64, f64) {
    (p.0.clamp(0.0, (dims.width - 1) as f64), p.1.clamp(0.0, (dims.height - 1) as f64))
}

/// Index of the largest logit; the first wins ties.
pub fn argmax(logits: &[f64]) -> usize {
    logits.iter().enumerate().fold(0, |b, (i, &v)| if v > logits[b] { i } else { b })
}
