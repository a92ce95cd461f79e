use crate::numerics::{batchnorm_layer, BnPass, Graph, NumericsError, ParamId, ParamStore, RunningStats, Tensor, Var};
use crate::rng::Rng;

use super::navmap::{NavMap, MAP_CHANNELS};

/// Map channels plus the two normalized coordinate planes.
pub const ENCODER_INPUT_CHANNELS: usize = MAP_CHANNELS + 2;

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    pub c0: usize,
    pub stages: usize,
    /// Output feature dimension.
    pub d: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self { c0: 16, stages: 3, d: 128 }
    }
}

impl EncoderConfig {
    /// Channel width of stage `s`; the last downsample keeps its width.
    pub fn width(&self, s: usize) -> usize {
        self.c0 << s.min(self.stages.saturating_sub(1))
    }
}

/// Conv (stride 1, same padding) and batch norm of one residual block.
#[derive(Clone, Debug)]
pub struct ConvBn {
    pub conv: ParamId,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub bn: String,
}

impl ConvBn {
    fn new(store: &mut ParamStore, name: &str, c_in: usize, c_out: usize, k: usize, rng: &mut Rng) -> Result<Self, NumericsError> {
        let conv = store.add_uniform(&format!("{name}.w"), &[c_out, c_in, k, k], c_in * k * k, rng)?;
        let gamma = store.add_const(&format!("{name}.bn.gamma"), &[c_out], 1.0)?;
        let beta = store.add_const(&format!("{name}.bn.beta"), &[c_out], 0.0)?;
        let bn = format!("{name}.bn");
        *store.bn_stats_mut(&bn) = RunningStats::from_values(vec![0.0; c_out], vec![1.0; c_out]);
        Ok(Self { conv, gamma, beta, bn })
    }

    fn apply(&self, g: &mut Graph, store: &ParamStore, x: Var, stride: usize, pass: &mut BnPass) -> Result<Var, NumericsError> {
        let k = store.value(self.conv).shape()[2];
        let w = g.param(store, self.conv);
        let y = g.conv2d(x, w, stride, k / 2)?;
        batchnorm_layer(g, store, y, self.gamma, self.beta, &self.bn, pass)
    }
}

/// Depthwise spatial kernel, pointwise channel mixer and fusion batch norm.
#[derive(Clone, Debug)]
pub struct ScConvParams {
    pub depthwise: ParamId,
    pub pointwise: ParamId,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub bn: String,
}

impl ScConvParams {
    fn new(store: &mut ParamStore, name: &str, c: usize, k: usize, rng: &mut Rng) -> Result<Self, NumericsError> {
        let depthwise = store.add_uniform(&format!("{name}.depthwise"), &[c, 1, k, k], k * k, rng)?;
        let pointwise = store.add_uniform(&format!("{name}.pointwise"), &[c, c, 1, 1], c, rng)?;
        let gamma = store.add_const(&format!("{name}.bn.gamma"), &[c], 1.0)?;
        let beta = store.add_const(&format!("{name}.bn.beta"), &[c], 0.0)?;
        let bn = format!("{name}.bn");
        *store.bn_stats_mut(&bn) = RunningStats::from_values(vec![0.0; c], vec![1.0; c]);
        Ok(Self { depthwise, pointwise, gamma, beta, bn })
    }
}

/// `ReLU(BN(Conv(F)) + F)`.
pub fn residual_block(g: &mut Graph, store: &ParamStore, x: Var, p: &ConvBn, pass: &mut BnPass) -> Result<Var, NumericsError> {
    let y = p.apply(g, store, x, 1, pass)?;
    let s = g.add(y, x)?;
    g.relu(s)
}

/// `ReLU(BN(U * C'))` with `U` the depthwise spatial response and `C'` the
/// pointwise channel mix of the same input.
pub fn scconv_fuse(g: &mut Graph, store: &ParamStore, x: Var, p: &ScConvParams, pass: &mut BnPass) -> Result<Var, NumericsError> {
    let dw = g.param(store, p.depthwise);
    let pw = g.param(store, p.pointwise);
    let u = g.depthwise_conv2d(x, dw)?;
    let c = g.conv2d(x, pw, 1, 0)?;
    let fused = g.mul(u, c)?;
    let y = batchnorm_layer(g, store, fused, p.gamma, p.beta, &p.bn, pass)?;
    g.relu(y)
}

/// Zero-pads a `[N,C,H,W]` node at the far edges so both spatial sizes are odd.
pub fn pad_odd(g: &mut Graph, x: Var) -> Result<Var, NumericsError> {
    let s = g.value(x).shape();
    let (ph, pw) = ((s[2] + 1) % 2, (s[3] + 1) % 2);
    if ph == 0 && pw == 0 {
        Ok(x)
    } else {
        g.pad_end(x, ph, pw)
    }
}

#[derive(Clone, Debug)]
pub struct Stage {
    pub blocks: Vec<ConvBn>,
    pub down: ConvBn,
}

/// Stem, residual stages with stride-2 downsampling, SCConv fusion, global
/// average pooling and a linear projection to `d` features.
#[derive(Clone, Debug)]
pub struct MapEncoder {
    pub cfg: EncoderConfig,
    pub stem: ConvBn,
    pub stages: Vec<Stage>,
    pub scconv: ScConvParams,
    pub out_w: ParamId,
    pub out_b: ParamId,
}

impl MapEncoder {
    pub fn new(store: &mut ParamStore, prefix: &str, cfg: &EncoderConfig, rng: &mut Rng) -> Result<Self, NumericsError> {
        if cfg.c0 == 0 || cfg.stages == 0 || cfg.d == 0 {
            return Err(NumericsError::Config("encoder needs c0, stages and d >= 1".into()));
        }
        let stem = ConvBn::new(store, &format!("{prefix}.stem"), ENCODER_INPUT_CHANNELS, cfg.c0, 3, rng)?;
        let mut stages = Vec::with_capacity(cfg.stages);
        for s in 0..cfg.stages {
            let c = cfg.width(s);
            let blocks = (0..2).map(|b| ConvBn::new(store, &format!("{prefix}.s{s}.res{b}"), c, c, 3, rng)).collect::<Result<Vec<_>, _>>()?;
            let down = ConvBn::new(store, &format!("{prefix}.s{s}.down"), c, cfg.width(s + 1), 3, rng)?;
            stages.push(Stage { blocks, down });
        }
        let c_last = cfg.width(cfg.stages);
        let scconv = ScConvParams::new(store, &format!("{prefix}.scconv"), c_last, 3, rng)?;
        let out_w = store.add_uniform(&format!("{prefix}.out.w"), &[c_last, cfg.d], c_last, rng)?;
        let out_b = store.add_const(&format!("{prefix}.out.b"), &[cfg.d], 0.0)?;
        Ok(Self { cfg: cfg.clone(), stem, stages, scconv, out_w, out_b })
    }

    /// Stacks maps into `[N, C+2, H, W]`, zeroing the `drop` channels and
    /// appending x and y coordinate planes.
    pub fn input_tensor(maps: &[&NavMap], drop: &[usize]) -> Tensor {
        let (h, w) = (maps[0].height, maps[0].width);
        let plane = h * w;
        let mut data = vec![0.0; maps.len() * ENCODER_INPUT_CHANNELS * plane];
        for (n, m) in maps.iter().enumerate() {
            let base = n * ENCODER_INPUT_CHANNELS * plane;
            for c in 0..MAP_CHANNELS {
                if !drop.contains(&c) {
                    data[base + c * plane..base + (c + 1) * plane].copy_from_slice(m.channel(c));
                }
            }
            for y in 0..h {
                for x in 0..w {
                    data[base + MAP_CHANNELS * plane + y * w + x] = (x as f64 + 0.5) / w as f64;
                    data[base + (MAP_CHANNELS + 1) * plane + y * w + x] = (y as f64 + 0.5) / h as f64;
                }
            }
        }
        Tensor::new(vec![maps.len(), ENCODER_INPUT_CHANNELS, h, w], data).expect("encoder input shape")
    }

    /// `[N, C+2, H, W]` to `[N, d]`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, pass: &mut BnPass) -> Result<Var, NumericsError> {
        let x = pad_odd(g, x)?;
        let y = self.stem.apply(g, store, x, 2, pass)?;
        let mut h = g.relu(y)?;
        for stage in &self.stages {
            for b in &stage.blocks {
                h = residual_block(g, store, h, b, pass)?;
            }
            h = pad_odd(g, h)?;
            let y = stage.down.apply(g, store, h, 2, pass)?;
            h = g.relu(y)?;
        }
        h = scconv_fuse(g, store, h, &self.scconv, pass)?;
        let pooled = g.global_avg_pool(h)?;
        let (w, b) = (g.param(store, self.out_w), g.param(store, self.out_b));
        g.linear(pooled, w, b)
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.stem.conv, self.stem.gamma, self.stem.beta];
        for s in &self.stages {
            for b in s.blocks.iter().chain(std::iter::once(&s.down)) {
                ids.extend([b.conv, b.gamma, b.beta]);
            }
        }
        ids.extend([self.scconv.depthwise, self.scconv.pointwise, self.scconv.gamma, self.scconv.beta, self.out_w, self.out_b]);
        ids
    }
}
