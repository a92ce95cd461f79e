use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};

use super::loss::il_loss_graph;
use crate::agent::{ego_patch, pose_features, waypoint_context, Policy, PolicyBatch, POSE_FEATURES, WAYPOINT_CONTEXT};
use crate::error::{Error, Result};
use crate::mapper::{MapEncoder, NavMap};
use crate::numerics::{adam_step, AdamConfig, AdamState, BnPass, Graph, Tensor, Var};
use crate::rng::{substream, Rng};
use crate::teacher::Demonstration;
use crate::world::{render_observation, CityWorld, OBS_CHANNELS};

#[derive(Clone, Debug, PartialEq)]
pub struct Stage1Config {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    pub lambda_bc: f64,
    pub lambda_wp: f64,
    /// Standard deviation (cells) of the jitter added to the actor's training target.
    pub context_noise: f64,
    /// Global gradient-norm cap; `0` disables clipping.
    pub grad_clip: f64,
    pub seed: u64,
}

impl Default for Stage1Config {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 32,
            optimizer: AdamConfig { lr: 1e-3, weight_decay: 1e-4, ..AdamConfig::default() },
            lambda_bc: 1.0,
            lambda_wp: 1.0,
            context_noise: 0.5,
            grad_clip: 5.0,
            seed: 0,
        }
    }
}

/// Per-epoch means of the stage-1 loss terms.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EpochLosses {
    pub l_il: f64,
    pub l_v: f64,
    pub l_bc: f64,
    pub l_wp: f64,
    pub total: f64,
}

#[derive(Clone, Debug)]
pub struct Stage1Result {
    pub policy: Policy,
    pub adam: AdamState,
    pub curve: Vec<EpochLosses>,
    /// Set when training stopped on a non-finite loss; `policy` is then the last good one.
    pub aborted: Option<String>,
}

/// Labeled decision points drawn from demonstrations.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SampleRef {
    pub demo: usize,
    pub step: usize,
}

pub fn sample_refs(demos: &[Demonstration]) -> Vec<SampleRef> {
    demos.iter().enumerate().flat_map(|(d, demo)| (0..demo.steps.len()).map(move |s| SampleRef { demo: d, step: s })).collect()
}

/// Model inputs and targets for a supervised batch.
pub struct SupervisedBatch {
    pub inputs: PolicyBatch,
    /// `[N, 2]` normalized.
    pub goal: Tensor,
    /// `[N, 1]`.
    pub progress: Tensor,
    /// `[N, 1]` standardized.
    pub value: Tensor,
    /// `[N, 2]` normalized.
    pub waypoint: Tensor,
    pub actions: Vec<usize>,
}

fn find_world<'a>(worlds: &'a [CityWorld], id: &str) -> Result<&'a CityWorld> {
    worlds.iter().find(|w| w.id == id).ok_or_else(|| Error::MissingPrerequisite(format!("world {id} is not loaded")))
}

/// Assembles a batch; in flat mode the actor context is the true goal. With a
/// jitter source, the actor's target is offset by `N(0, sigma^2)` per coordinate.
pub fn supervised_batch(policy: &Policy, demos: &[Demonstration], worlds: &[CityWorld], refs: &[SampleRef], jitter: Option<(f64, &mut Rng)>) -> Result<SupervisedBatch> {
    let mut jitter = jitter;
    let cfg = &policy.cfg;
    let dims = cfg.dims;
    let (w, h) = (dims.width as f64, dims.height as f64);
    let n = refs.len();
    let mut maps = Vec::with_capacity(n);
    let mut obs = Vec::with_capacity(n * OBS_CHANNELS * dims.patch * dims.patch);
    let mut pose = Vec::with_capacity(n * POSE_FEATURES);
    let mut ctx = Vec::with_capacity(n * WAYPOINT_CONTEXT);
    let mut descriptors = Vec::with_capacity(n);
    let (mut goal, mut progress, mut value, mut waypoint, mut actions) = (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for r in refs {
        let demo = &demos[r.demo];
        let step = &demo.steps[r.step];
        let world = find_world(worlds, &demo.episode.world_id)?;
        if (world.width, world.height, world.z_max, world.patch_size()) != (dims.width, dims.height, dims.z_max, dims.patch) {
            return Err(Error::Contract(format!("world {} does not match the model dimensions", world.id)));
        }
        maps.push(NavMap::from_packed(world.width, world.height, world.z_max, &demo.prior, &step.packed_map));
        obs.extend_from_slice(ego_patch(&render_observation(world, &step.state).patch, step.state.heading).data());
        pose.extend(pose_features(&step.state, &dims));
        let g = demo.goal();
        let wstar = demo.waypoint(r.step);
        let mut target = if cfg.flat { g } else { wstar };
        if let Some((sigma, rng)) = jitter.as_mut() {
            let noise = Normal::new(0.0, *sigma).map_err(|e| Error::Config(format!("context noise: {e}")))?;
            target = (target.0 + noise.sample(*rng), target.1 + noise.sample(*rng));
        }
        ctx.extend(waypoint_context(&step.state, target, cfg.context_scale));
        descriptors.push(demo.episode.descriptor);
        goal.extend([g.0 / w, g.1 / h]);
        progress.push(step.progress);
        value.push((step.value - policy.value_mean) / policy.value_std);
        waypoint.extend([wstar.0 / w, wstar.1 / h]);
        actions.push(step.action.index());
    }
    let map_refs: Vec<&NavMap> = maps.iter().collect();
    Ok(SupervisedBatch {
        inputs: PolicyBatch {
            maps: Some(MapEncoder::input_tensor(&map_refs, &cfg.drop_channels)),
            obs: Tensor::new(vec![n, OBS_CHANNELS, dims.patch, dims.patch], obs)?,
            pose: Tensor::new(vec![n, POSE_FEATURES], pose)?,
            descriptors,
            waypoint_context: Tensor::new(vec![n, WAYPOINT_CONTEXT], ctx)?,
        },
        goal: Tensor::new(vec![n, 2], goal)?,
        progress: Tensor::new(vec![n, 1], progress)?,
        value: Tensor::new(vec![n, 1], value)?,
        waypoint: Tensor::new(vec![n, 2], waypoint)?,
        actions,
    })
}

/// Graph nodes of the supervised composite.
pub struct CompositeVars {
    pub l_il: Var,
    pub l_v: Var,
    pub l_bc: Var,
    pub l_wp: Var,
    pub total: Var,
}

/// `L_IL + L_V + lambda_bc CE(actions) + lambda_wp MSE(waypoint)`.
pub fn supervised_composite(g: &mut Graph, policy: &Policy, batch: &SupervisedBatch, lambda_bc: f64, lambda_wp: f64, pass: &mut BnPass) -> Result<CompositeVars> {
    let f = policy.forward(g, &batch.inputs, None, pass)?;
    let l_il = il_loss_graph(g, f.heads.goal, batch.goal.clone(), f.heads.progress, batch.progress.clone())?;
    let l_v = g.mse(f.heads.value_std, batch.value.clone())?;
    let lp = g.log_softmax(f.logits)?;
    let picked = g.gather(lp, &batch.actions)?;
    let mean_lp = g.mean(picked)?;
    let l_bc = g.scale(mean_lp, -1.0)?;
    let l_wp = g.mse(f.heads.waypoint, batch.waypoint.clone())?;
    let a = g.add(l_il, l_v)?;
    let b = g.scale(l_bc, lambda_bc)?;
    let c = g.scale(l_wp, lambda_wp)?;
    let ab = g.add(a, b)?;
    let total = g.add(ab, c)?;
    Ok(CompositeVars { l_il, l_v, l_bc, l_wp, total })
}

/// Mean and standard deviation of the value labels (std floored at 1e-6).
pub fn value_label_stats(demos: &[Demonstration]) -> (f64, f64) {
    let v: Vec<f64> = demos.iter().flat_map(|d| d.steps.iter().map(|s| s.value)).collect();
    let n = v.len().max(1) as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt().max(1e-6))
}

/// Supervised pre-training of all heads on the corpus.
pub fn train_stage1(mut policy: Policy, demos: &[Demonstration], worlds: &[CityWorld], cfg: &Stage1Config) -> Result<Stage1Result> {
    if demos.is_empty() {
        return Err(Error::Contract("stage-1 training needs a non-empty corpus".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("stage-1 batch size must be >= 1".into()));
    }
    let mut adam = AdamState::new(&policy.store);
    let mut curve = Vec::with_capacity(cfg.epochs);
    if cfg.epochs == 0 {
        return Ok(Stage1Result { policy, adam, curve, aborted: None });
    }
    let (mean, std) = value_label_stats(demos);
    policy.set_value_normalization(mean, std)?;
    let mut refs = sample_refs(demos);
    for epoch in 0..cfg.epochs {
        refs.shuffle(&mut substream(cfg.seed, "stage1-shuffle", epoch as u64));
        let mut noise_rng = substream(cfg.seed, "stage1-context-noise", epoch as u64);
        let mut sums = EpochLosses::default();
        let mut count = 0.0;
        for chunk in refs.chunks(cfg.batch_size) {
            let jitter = (cfg.context_noise > 0.0).then_some((cfg.context_noise, &mut noise_rng));
            let batch = supervised_batch(&policy, demos, worlds, chunk, jitter)?;
            let mut g = Graph::new();
            let mut pass = BnPass::train();
            let v = supervised_composite(&mut g, &policy, &batch, cfg.lambda_bc, cfg.lambda_wp, &mut pass)?;
            let total = g.value(v.total).item();
            if !total.is_finite() {
                return Ok(Stage1Result { policy, adam, curve, aborted: Some(format!("non-finite stage-1 loss at epoch {epoch}")) });
            }
            let mut grads = g.backward(v.total)?.param_grads(&policy.store);
            if cfg.grad_clip > 0.0 {
                grads.clip_global_norm(cfg.grad_clip);
            }
            let before = (policy.store.clone(), adam.clone());
            if let Err(e) = adam_step(&mut policy.store, &grads, &mut adam, &cfg.optimizer) {
                policy.store = before.0;
                return Ok(Stage1Result { policy, adam: before.1, curve, aborted: Some(e.to_string()) });
            }
            pass.apply(&mut policy.store);
            let k = chunk.len() as f64;
            sums.l_il += k * g.value(v.l_il).item();
            sums.l_v += k * g.value(v.l_v).item();
            sums.l_bc += k * g.value(v.l_bc).item();
            sums.l_wp += k * g.value(v.l_wp).item();
            sums.total += k * total;
            count += k;
        }
        curve.push(EpochLosses { l_il: sums.l_il / count, l_v: sums.l_v / count, l_bc: sums.l_bc / count, l_wp: sums.l_wp / count, total: sums.total / count });
    }
    Ok(Stage1Result { policy, adam, curve, aborted: None })
}
