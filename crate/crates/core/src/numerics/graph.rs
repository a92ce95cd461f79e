//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! Nodes are appended in evaluation order, so the node list is a topological
//! order by construction and `backward` is a single reverse sweep.

use std::collections::HashMap;

use super::gemm::matmul;
use super::params::{ParamGrads, ParamId, ParamStore, RunningStats};
use super::{NumericsError, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    out_c: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

enum Op {
    Leaf,
    Linear { x: Var, w: Var, b: Var },
    Conv2d { x: Var, k: Var, geom: ConvGeom, cols: Vec<f64> },
    Depthwise { x: Var, k: Var, geom: ConvGeom },
    ChannelBias { x: Var, b: Var },
    PadEnd { x: Var, ph: usize, pw: usize },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64>, train: bool },
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Square(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Minimum(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Clip { x: Var, lo: f64, hi: f64 },
    GlobalAvgPool(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Concat(Vec<Var>),
    Reshape(Var),
    SumAll(Var),
    MeanAll(Var),
    SumRows(Var),
    Gather { x: Var, indices: Vec<usize> },
    Embedding { table: Var, ids: Vec<usize> },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Linear { .. } => "linear",
            Op::Conv2d { .. } => "conv2d",
            Op::Depthwise { .. } => "depthwise_conv2d",
            Op::ChannelBias { .. } => "channel_bias",
            Op::PadEnd { .. } => "pad_end",
            Op::BatchNorm { .. } => "batchnorm2d",
            Op::Relu(_) => "relu",
            Op::Sigmoid(_) => "sigmoid",
            Op::Tanh(_) => "tanh",
            Op::Exp(_) => "exp",
            Op::Square(_) => "square",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Minimum(..) => "minimum",
            Op::Scale(..) => "scale",
            Op::AddScalar(_) => "add_scalar",
            Op::Clip { .. } => "clip_value",
            Op::GlobalAvgPool(_) => "global_avg_pool",
            Op::Softmax(_) => "softmax",
            Op::LogSoftmax(_) => "log_softmax",
            Op::Concat(_) => "concat",
            Op::Reshape(_) => "reshape",
            Op::SumAll(_) => "sum",
            Op::MeanAll(_) => "mean",
            Op::SumRows(_) => "sum_rows",
            Op::Gather { .. } => "gather",
            Op::Embedding { .. } => "embedding",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Batch-norm evaluation mode.
pub enum BnMode<'a> {
    /// Normalize with batch statistics and fold them into the running stats.
    Train { stats: &'a mut RunningStats, momentum: f64 },
    /// Normalize with running statistics.
    Infer(&'a RunningStats),
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    param_leaves: HashMap<ParamId, Var>,
}

/// Gradients of a scalar loss with respect to every node of a graph.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    params: Vec<(ParamId, Var)>,
}

impl Gradients {
    pub fn wrt(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    /// Gradients for the parameters used in the graph, laid out per store block.
    pub fn param_grads(&self, store: &ParamStore) -> ParamGrads {
        let mut out = ParamGrads::empty(store);
        for &(id, var) in &self.params {
            if let Some(g) = self.wrt(var) {
                out.accumulate(id, g);
            }
        }
        out
    }
}

fn shape_err(op: &'static str, left: &[usize], right: &[usize]) -> NumericsError {
    NumericsError::Shape { op, left: left.to_vec(), right: right.to_vec() }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    fn data(&self, var: Var) -> &[f64] {
        self.nodes[var.0].value.data()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Result<Var, NumericsError> {
        if !value.is_finite() {
            return Err(NumericsError::NonFinite { context: format!("forward {}", op.name()) });
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Constant (or input) leaf.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf });
        Var(self.nodes.len() - 1)
    }

    /// Makes later `param(_, id)` calls return `var`, so a parameter can be fed
    /// from an arbitrary node (used by gradient checks over parameters).
    pub fn bind_param(&mut self, id: ParamId, var: Var) {
        self.param_leaves.insert(id, var);
    }

    /// Leaf holding a copy of a stored parameter; one leaf per parameter per graph.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.param_leaves.get(&id) {
            return v;
        }
        let v = self.constant(store.value(id).clone());
        self.param_leaves.insert(id, v);
        v
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var, NumericsError> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] {
            return Err(shape_err("linear", xs, ws));
        }
        if bs != [ws[1]] {
            return Err(shape_err("linear", ws, bs));
        }
        let (n, din, dout) = (xs[0], xs[1], ws[1]);
        let mut out = Vec::with_capacity(n * dout);
        for _ in 0..n {
            out.extend_from_slice(self.data(b));
        }
        matmul(n, din, dout, self.data(x), false, self.data(w), false, &mut out, true);
        self.push(Tensor::new(vec![n, dout], out)?, Op::Linear { x, w, b })
    }

    /// Cross-correlation of `[N,C,H,W]` (or `[C,H,W]`) with `[O,C,k,k]` kernels, zero padding.
    pub fn conv2d(&mut self, x: Var, k: Var, stride: usize, pad: usize) -> Result<Var, NumericsError> {
        let unbatched = self.shape(x).len() == 3;
        let (n, c, h, w) = dims4(self.shape(x)).ok_or_else(|| shape_err("conv2d", self.shape(x), &[]))?;
        let ks = self.shape(k);
        if ks.len() != 4 || ks[1] != c {
            return Err(shape_err("conv2d", self.shape(x), ks));
        }
        let (out_c, kh, kw) = (ks[0], ks[2], ks[3]);
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(NumericsError::Config(format!("conv2d kernel {kh}x{kw} must be odd")));
        }
        if stride == 0 {
            return Err(NumericsError::Config("conv2d stride must be >= 1".into()));
        }
        let oh = out_size(h, kh, stride, pad)?;
        let ow = out_size(w, kw, stride, pad)?;
        let geom = ConvGeom { n, c, h, w, out_c, kh, kw, stride, pad, oh, ow };
        let ck = c * kh * kw;
        let l = oh * ow;
        let mut cols = vec![0.0; n * ck * l];
        let xd = self.data(x);
        for i in 0..n {
            im2col(&xd[i * c * h * w..(i + 1) * c * h * w], &geom, &mut cols[i * ck * l..(i + 1) * ck * l]);
        }
        let mut out = vec![0.0; n * out_c * l];
        let kd = self.data(k);
        for i in 0..n {
            matmul(out_c, ck, l, kd, false, &cols[i * ck * l..(i + 1) * ck * l], false, &mut out[i * out_c * l..(i + 1) * out_c * l], false);
        }
        let shape = if unbatched { vec![out_c, oh, ow] } else { vec![n, out_c, oh, ow] };
        self.push(Tensor::new(shape, out)?, Op::Conv2d { x, k, geom, cols })
    }

    /// Per-channel spatial convolution, stride 1, size-preserving padding.
    /// Kernel shape `[C,1,k,k]`.
    pub fn depthwise_conv2d(&mut self, x: Var, k: Var) -> Result<Var, NumericsError> {
        let (n, c, h, w) = dims4(self.shape(x)).ok_or_else(|| shape_err("depthwise_conv2d", self.shape(x), &[]))?;
        let ks = self.shape(k);
        if ks.len() != 4 || ks[0] != c || ks[1] != 1 || ks[2] % 2 == 0 || ks[3] != ks[2] {
            return Err(shape_err("depthwise_conv2d", self.shape(x), ks));
        }
        let kk = ks[2];
        let pad = kk / 2;
        let geom = ConvGeom { n, c, h, w, out_c: c, kh: kk, kw: kk, stride: 1, pad, oh: h, ow: w };
        let (xd, kd) = (self.data(x), self.data(k));
        let mut out = vec![0.0; n * c * h * w];
        for b in 0..n {
            for ch in 0..c {
                let base = (b * c + ch) * h * w;
                let kern = &kd[ch * kk * kk..(ch + 1) * kk * kk];
                for oy in 0..h {
                    for ox in 0..w {
                        let mut acc = 0.0;
                        for ky in 0..kk {
                            let iy = oy as isize + ky as isize - pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..kk {
                                let ix = ox as isize + kx as isize - pad as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                acc += kern[ky * kk + kx] * xd[base + iy as usize * w + ix as usize];
                            }
                        }
                        out[base + oy * w + ox] = acc;
                    }
                }
            }
        }
        let shape = self.shape(x).to_vec();
        self.push(Tensor::new(shape, out)?, Op::Depthwise { x, k, geom })
    }

    /// Adds `b[c]` to every spatial position of channel `c`.
    pub fn channel_bias(&mut self, x: Var, b: Var) -> Result<Var, NumericsError> {
        let (n, c, h, w) = dims4(self.shape(x)).ok_or_else(|| shape_err("channel_bias", self.shape(x), &[]))?;
        if self.shape(b) != [c] {
            return Err(shape_err("channel_bias", self.shape(x), self.shape(b)));
        }
        let bd = self.data(b);
        let mut out = self.data(x).to_vec();
        for i in 0..n {
            for ch in 0..c {
                let base = (i * c + ch) * h * w;
                out[base..base + h * w].iter_mut().for_each(|v| *v += bd[ch]);
            }
        }
        let shape = self.shape(x).to_vec();
        self.push(Tensor::new(shape, out)?, Op::ChannelBias { x, b })
    }

    /// Zero-pads the bottom and right edges of a `[N,C,H,W]` tensor.
    pub fn pad_end(&mut self, x: Var, ph: usize, pw: usize) -> Result<Var, NumericsError> {
        let (n, c, h, w) = dims4(self.shape(x)).ok_or_else(|| shape_err("pad_end", self.shape(x), &[]))?;
        let (nh, nw) = (h + ph, w + pw);
        let xd = self.data(x);
        let mut out = vec![0.0; n * c * nh * nw];
        for p in 0..n * c {
            for y in 0..h {
                out[p * nh * nw + y * nw..p * nh * nw + y * nw + w].copy_from_slice(&xd[p * h * w + y * w..p * h * w + (y + 1) * w]);
            }
        }
        self.push(Tensor::new(vec![n, c, nh, nw], out)?, Op::PadEnd { x, ph, pw })
    }

    /// Per-channel batch normalization of `[N,C,H,W]` followed by `gamma * x_hat + beta`.
    pub fn batchnorm2d(&mut self, x: Var, gamma: Var, beta: Var, eps: f64, mode: BnMode<'_>) -> Result<Var, NumericsError> {
        if eps <= 0.0 {
            return Err(NumericsError::Config(format!("batchnorm eps must be positive, got {eps}")));
        }
        let (n, c, h, w) = dims4(self.shape(x)).ok_or_else(|| shape_err("batchnorm2d", self.shape(x), &[]))?;
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(shape_err("batchnorm2d", self.shape(x), self.shape(gamma)));
        }
        let hw = h * w;
        let m = (n * hw) as f64;
        let xd = self.data(x);
        let (mean, var, train) = match &mode {
            BnMode::Train { .. } => {
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for i in 0..n {
                    for ch in 0..c {
                        let s = &xd[(i * c + ch) * hw..(i * c + ch + 1) * hw];
                        mean[ch] += s.iter().sum::<f64>();
                    }
                }
                mean.iter_mut().for_each(|v| *v /= m);
                for i in 0..n {
                    for ch in 0..c {
                        let s = &xd[(i * c + ch) * hw..(i * c + ch + 1) * hw];
                        var[ch] += s.iter().map(|v| (v - mean[ch]).powi(2)).sum::<f64>();
                    }
                }
                var.iter_mut().for_each(|v| *v /= m);
                (mean, var, true)
            }
            BnMode::Infer(stats) => {
                let (mean, var) = stats.values().ok_or_else(|| NumericsError::State("batchnorm2d infer mode requires populated running stats".into()))?;
                if mean.len() != c {
                    return Err(shape_err("batchnorm2d", &[c], &[mean.len()]));
                }
                (mean.to_vec(), var.to_vec(), false)
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let (gd, bd) = (self.data(gamma), self.data(beta));
        let mut xhat = vec![0.0; xd.len()];
        let mut out = vec![0.0; xd.len()];
        for i in 0..n {
            for ch in 0..c {
                for j in (i * c + ch) * hw..(i * c + ch + 1) * hw {
                    let xh = (xd[j] - mean[ch]) * inv_std[ch];
                    xhat[j] = xh;
                    out[j] = gd[ch] * xh + bd[ch];
                }
            }
        }
        if let BnMode::Train { stats, momentum } = mode {
            stats.update(&mean, &var, momentum);
        }
        let shape = self.shape(x).to_vec();
        self.push(Tensor::new(shape, out)?, Op::BatchNorm { x, gamma, beta, xhat, inv_std, train })
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var, NumericsError> {
        let t = &self.nodes[x.0].value;
        let out = Tensor::new(t.shape().to_vec(), t.data().iter().map(|&v| f(v)).collect())?;
        self.push(out, op)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, NumericsError> {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var, NumericsError> {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var, NumericsError> {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    pub fn exp(&mut self, x: Var) -> Result<Var, NumericsError> {
        self.unary(x, f64::exp, Op::Exp(x))
    }

    pub fn square(&mut self, x: Var) -> Result<Var, NumericsError> {
        self.unary(x, |v| v * v, Op::Square(x))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var, NumericsError> {
        self.unary(x, |v| v * factor, Op::Scale(x, factor))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var, NumericsError> {
        self.unary(x, |v| v + c, Op::AddScalar(x))
    }

    /// `min(max(x, lo), hi)`; gradient passes only where `lo <= x <= hi`.
    pub fn clip_value(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var, NumericsError> {
        if lo > hi {
            return Err(NumericsError::Config(format!("clip bounds inverted: lo {lo} > hi {hi}")));
        }
        self.unary(x, |v| v.max(lo).min(hi), Op::Clip { x, lo, hi })
    }

    fn binary(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var, NumericsError> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(name, self.shape(a), self.shape(b)));
        }
        let data = self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(self.shape(a).to_vec(), data)?;
        self.push(out, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    /// Elementwise minimum; ties route the gradient to `a`.
    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.binary(a, b, "minimum", f64::min, Op::Minimum(a, b))
    }

    /// `[N,C,H,W] -> [N,C]` (or `[C,H,W] -> [C]`).
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var, NumericsError> {
        let unbatched = self.shape(x).len() == 3;
        let (n, c, h, w) = dims4(self.shape(x)).ok_or_else(|| shape_err("global_avg_pool", self.shape(x), &[]))?;
        let hw = (h * w) as f64;
        let out: Vec<f64> = self.data(x).chunks(h * w).map(|s| s.iter().sum::<f64>() / hw).collect();
        let shape = if unbatched { vec![c] } else { vec![n, c] };
        self.push(Tensor::new(shape, out)?, Op::GlobalAvgPool(x))
    }

    fn rows(&self, x: Var, name: &'static str) -> Result<(usize, usize), NumericsError> {
        match self.shape(x) {
            [n, a] => Ok((*n, *a)),
            [a] => Ok((1, *a)),
            s => Err(shape_err(name, s, &[])),
        }
    }

    /// Softmax over the last axis of a `[N,A]` (or `[A]`) tensor.
    pub fn softmax_logits(&mut self, x: Var) -> Result<Var, NumericsError> {
        let (_, a) = self.rows(x, "softmax")?;
        let data = self.data(x).chunks(a).flat_map(softmax).collect();
        let out = Tensor::new(self.shape(x).to_vec(), data)?;
        self.push(out, Op::Softmax(x))
    }

    pub fn log_softmax(&mut self, x: Var) -> Result<Var, NumericsError> {
        let (_, a) = self.rows(x, "log_softmax")?;
        let data = self.data(x).chunks(a).flat_map(log_softmax).collect();
        let out = Tensor::new(self.shape(x).to_vec(), data)?;
        self.push(out, Op::LogSoftmax(x))
    }

    /// Concatenates `[N, d_i]` tensors along the feature axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        let n = self.rows(parts[0], "concat")?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pn, d) = self.rows(p, "concat")?;
            if pn != n {
                return Err(shape_err("concat", self.shape(parts[0]), self.shape(p)));
            }
            widths.push(d);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(n * total);
        for i in 0..n {
            for (&p, &d) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.data(p)[i * d..(i + 1) * d]);
            }
        }
        self.push(Tensor::new(vec![n, total], out)?, Op::Concat(parts.to_vec()))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, NumericsError> {
        let t = self.nodes[x.0].value.clone().reshape(shape)?;
        self.push(t, Op::Reshape(x))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, NumericsError> {
        let s = self.data(x).iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll(x))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var, NumericsError> {
        let d = self.data(x);
        let s = d.iter().sum::<f64>() / d.len() as f64;
        self.push(Tensor::scalar(s), Op::MeanAll(x))
    }

    /// `[N,A] -> [N]` row sums.
    pub fn sum_rows(&mut self, x: Var) -> Result<Var, NumericsError> {
        let (n, a) = self.rows(x, "sum_rows")?;
        let out = self.data(x).chunks(a).map(|r| r.iter().sum()).collect();
        self.push(Tensor::new(vec![n], out)?, Op::SumRows(x))
    }

    /// Picks `x[i, indices[i]]` from a `[N,A]` tensor.
    pub fn gather(&mut self, x: Var, indices: &[usize]) -> Result<Var, NumericsError> {
        let (n, a) = self.rows(x, "gather")?;
        if indices.len() != n {
            return Err(shape_err("gather", self.shape(x), &[indices.len()]));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= a) {
            return Err(NumericsError::Contract(format!("gather index {bad} out of range for width {a}")));
        }
        let out = indices.iter().enumerate().map(|(i, &j)| self.data(x)[i * a + j]).collect();
        self.push(Tensor::new(vec![n], out)?, Op::Gather { x, indices: indices.to_vec() })
    }

    /// Row lookup in a `[V,E]` table, producing `[N,E]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var, NumericsError> {
        let (v, e) = self.rows(table, "embedding")?;
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(NumericsError::Contract(format!("embedding id {bad} out of range for table of {v}")));
        }
        let mut out = Vec::with_capacity(ids.len() * e);
        for &i in ids {
            out.extend_from_slice(&self.data(table)[i * e..(i + 1) * e]);
        }
        self.push(Tensor::new(vec![ids.len(), e], out)?, Op::Embedding { table, ids: ids.to_vec() })
    }

    /// Mean squared error against a constant target of the same shape.
    pub fn mse(&mut self, pred: Var, target: Tensor) -> Result<Var, NumericsError> {
        let t = self.constant(target);
        let d = self.sub(pred, t)?;
        let sq = self.square(d)?;
        self.mean(sq)
    }

    /// Reverse sweep from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NumericsError> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(NumericsError::Contract(format!("backward requires a scalar loss, got shape {:?}", self.nodes[loss.0].value.shape())));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(dy) = grads[i].take() else { continue };
            self.backprop_node(i, &dy, &mut grads)?;
            grads[i] = Some(dy);
        }
        let mut params: Vec<(ParamId, Var)> = self.param_leaves.iter().map(|(&p, &v)| (p, v)).collect();
        params.sort_by_key(|(p, _)| p.index());
        for (id, var) in &params {
            if let Some(g) = &grads[var.0] {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(NumericsError::NonFinite { context: format!("gradient of parameter block #{}", id.index()) });
                }
            }
        }
        Ok(Gradients { grads, params })
    }

    fn backprop_node(&self, i: usize, dy: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<(), NumericsError> {
        let node = &self.nodes[i];
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let (n, din) = (self.shape(*x)[0], self.shape(*x)[1]);
                let dout = self.shape(*w)[1];
                let mut dx = vec![0.0; n * din];
                matmul(n, dout, din, dy, false, self.data(*w), true, &mut dx, false);
                acc(grads, *x, &dx);
                let mut dw = vec![0.0; din * dout];
                matmul(din, n, dout, self.data(*x), true, dy, false, &mut dw, false);
                acc(grads, *w, &dw);
                let mut db = vec![0.0; dout];
                for row in dy.chunks(dout) {
                    db.iter_mut().zip(row).for_each(|(d, r)| *d += r);
                }
                acc(grads, *b, &db);
            }
            Op::Conv2d { x, k, geom, cols } => {
                let g = geom;
                let ck = g.c * g.kh * g.kw;
                let l = g.oh * g.ow;
                let mut dk = vec![0.0; g.out_c * ck];
                let mut dx = vec![0.0; g.n * g.c * g.h * g.w];
                let mut dcols = vec![0.0; ck * l];
                let kd = self.data(*k);
                for s in 0..g.n {
                    let dys = &dy[s * g.out_c * l..(s + 1) * g.out_c * l];
                    matmul(g.out_c, l, ck, dys, false, &cols[s * ck * l..(s + 1) * ck * l], true, &mut dk, true);
                    matmul(ck, g.out_c, l, kd, true, dys, false, &mut dcols, false);
                    col2im(&dcols, g, &mut dx[s * g.c * g.h * g.w..(s + 1) * g.c * g.h * g.w]);
                }
                acc(grads, *k, &dk);
                acc(grads, *x, &dx);
            }
            Op::Depthwise { x, k, geom } => {
                let g = geom;
                let kk = g.kh;
                let (xd, kd) = (self.data(*x), self.data(*k));
                let mut dx = vec![0.0; xd.len()];
                let mut dk = vec![0.0; kd.len()];
                for b in 0..g.n {
                    for ch in 0..g.c {
                        let base = (b * g.c + ch) * g.h * g.w;
                        for oy in 0..g.h {
                            for ox in 0..g.w {
                                let d = dy[base + oy * g.w + ox];
                                if d == 0.0 {
                                    continue;
                                }
                                for ky in 0..kk {
                                    let iy = oy as isize + ky as isize - g.pad as isize;
                                    if iy < 0 || iy >= g.h as isize {
                                        continue;
                                    }
                                    for kx in 0..kk {
                                        let ix = ox as isize + kx as isize - g.pad as isize;
                                        if ix < 0 || ix >= g.w as isize {
                                            continue;
                                        }
                                        let xi = base + iy as usize * g.w + ix as usize;
                                        let ki = ch * kk * kk + ky * kk + kx;
                                        dk[ki] += d * xd[xi];
                                        dx[xi] += d * kd[ki];
                                    }
                                }
                            }
                        }
                    }
                }
                acc(grads, *x, &dx);
                acc(grads, *k, &dk);
            }
            Op::ChannelBias { x, b } => {
                acc(grads, *x, dy);
                let (n, c, h, w) = dims4(self.shape(*x)).expect("validated in forward");
                let mut db = vec![0.0; c];
                for s in 0..n {
                    for ch in 0..c {
                        let base = (s * c + ch) * h * w;
                        db[ch] += dy[base..base + h * w].iter().sum::<f64>();
                    }
                }
                acc(grads, *b, &db);
            }
            Op::PadEnd { x, ph, pw } => {
                let (n, c, h, w) = dims4(self.shape(*x)).expect("validated in forward");
                let (nh, nw) = (h + ph, w + pw);
                let mut dx = vec![0.0; n * c * h * w];
                for p in 0..n * c {
                    for yy in 0..h {
                        dx[p * h * w + yy * w..p * h * w + (yy + 1) * w].copy_from_slice(&dy[p * nh * nw + yy * nw..p * nh * nw + yy * nw + w]);
                    }
                }
                acc(grads, *x, &dx);
            }
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, train } => {
                let (n, c, h, w) = dims4(self.shape(*x)).expect("validated in forward");
                let hw = h * w;
                let m = (n * hw) as f64;
                let gd = self.data(*gamma);
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                for s in 0..n {
                    for ch in 0..c {
                        for j in (s * c + ch) * hw..(s * c + ch + 1) * hw {
                            dgamma[ch] += dy[j] * xhat[j];
                            dbeta[ch] += dy[j];
                        }
                    }
                }
                let mut dx = vec![0.0; dy.len()];
                for s in 0..n {
                    for ch in 0..c {
                        for j in (s * c + ch) * hw..(s * c + ch + 1) * hw {
                            dx[j] = if *train {
                                // d x_hat = dy * gamma; sums over the channel are dbeta*gamma and dgamma*gamma.
                                gd[ch] * inv_std[ch] * (dy[j] - dbeta[ch] / m - xhat[j] * dgamma[ch] / m)
                            } else {
                                gd[ch] * inv_std[ch] * dy[j]
                            };
                        }
                    }
                }
                acc(grads, *x, &dx);
                acc(grads, *gamma, &dgamma);
                acc(grads, *beta, &dbeta);
            }
            Op::Relu(x) => {
                let dx: Vec<f64> = self.data(*x).iter().zip(dy).map(|(&v, &d)| if v > 0.0 { d } else { 0.0 }).collect();
                acc(grads, *x, &dx);
            }
            Op::Sigmoid(x) => {
                let dx: Vec<f64> = y.iter().zip(dy).map(|(&s, &d)| d * s * (1.0 - s)).collect();
                acc(grads, *x, &dx);
            }
            Op::Tanh(x) => {
                let dx: Vec<f64> = y.iter().zip(dy).map(|(&t, &d)| d * (1.0 - t * t)).collect();
                acc(grads, *x, &dx);
            }
            Op::Exp(x) => {
                let dx: Vec<f64> = y.iter().zip(dy).map(|(&e, &d)| d * e).collect();
                acc(grads, *x, &dx);
            }
            Op::Square(x) => {
                let dx: Vec<f64> = self.data(*x).iter().zip(dy).map(|(&v, &d)| 2.0 * v * d).collect();
                acc(grads, *x, &dx);
            }
            Op::Add(a, b) => {
                acc(grads, *a, dy);
                acc(grads, *b, dy);
            }
            Op::Sub(a, b) => {
                acc(grads, *a, dy);
                let neg: Vec<f64> = dy.iter().map(|d| -d).collect();
                acc(grads, *b, &neg);
            }
            Op::Mul(a, b) => {
                let da: Vec<f64> = self.data(*b).iter().zip(dy).map(|(v, d)| v * d).collect();
                let db: Vec<f64> = self.data(*a).iter().zip(dy).map(|(v, d)| v * d).collect();
                acc(grads, *a, &da);
                acc(grads, *b, &db);
            }
            Op::Minimum(a, b) => {
                let (ad, bd) = (self.data(*a), self.data(*b));
                let da: Vec<f64> = ad.iter().zip(bd).zip(dy).map(|((x, y), d)| if x <= y { *d } else { 0.0 }).collect();
                let db: Vec<f64> = ad.iter().zip(bd).zip(dy).map(|((x, y), d)| if x <= y { 0.0 } else { *d }).collect();
                acc(grads, *a, &da);
                acc(grads, *b, &db);
            }
            Op::Scale(x, f) => {
                let dx: Vec<f64> = dy.iter().map(|d| d * f).collect();
                acc(grads, *x, &dx);
            }
            Op::AddScalar(x) | Op::Reshape(x) => acc(grads, *x, dy),
            Op::Clip { x, lo, hi } => {
                let dx: Vec<f64> = self.data(*x).iter().zip(dy).map(|(&v, &d)| if v >= *lo && v <= *hi { d } else { 0.0 }).collect();
                acc(grads, *x, &dx);
            }
            Op::GlobalAvgPool(x) => {
                let (_, _, h, w) = dims4(self.shape(*x)).expect("validated in forward");
                let hw = h * w;
                let mut dx = Vec::with_capacity(dy.len() * hw);
                for &d in dy {
                    dx.extend(std::iter::repeat_n(d / hw as f64, hw));
                }
                acc(grads, *x, &dx);
            }
            Op::Softmax(x) => {
                let a = *self.shape(*x).last().expect("validated in forward");
                let mut dx = vec![0.0; dy.len()];
                for ((yr, dr), out) in y.chunks(a).zip(dy.chunks(a)).zip(dx.chunks_mut(a)) {
                    let dot: f64 = yr.iter().zip(dr).map(|(p, d)| p * d).sum();
                    for j in 0..a {
                        out[j] = yr[j] * (dr[j] - dot);
                    }
                }
                acc(grads, *x, &dx);
            }
            Op::LogSoftmax(x) => {
                let a = *self.shape(*x).last().expect("validated in forward");
                let mut dx = vec![0.0; dy.len()];
                for ((yr, dr), out) in y.chunks(a).zip(dy.chunks(a)).zip(dx.chunks_mut(a)) {
                    let total: f64 = dr.iter().sum();
                    for j in 0..a {
                        out[j] = dr[j] - yr[j].exp() * total;
                    }
                }
                acc(grads, *x, &dx);
            }
            Op::Concat(parts) => {
                let total = *node.value.shape().last().expect("2-d");
                let n = node.value.len() / total;
                let mut offset = 0;
                for &p in parts {
                    let d = self.data(p).len() / n;
                    let mut dp = Vec::with_capacity(n * d);
                    for r in 0..n {
                        dp.extend_from_slice(&dy[r * total + offset..r * total + offset + d]);
                    }
                    acc(grads, p, &dp);
                    offset += d;
                }
            }
            Op::SumAll(x) => {
                let dx = vec![dy[0]; self.data(*x).len()];
                acc(grads, *x, &dx);
            }
            Op::MeanAll(x) => {
                let len = self.data(*x).len();
                let dx = vec![dy[0] / len as f64; len];
                acc(grads, *x, &dx);
            }
            Op::SumRows(x) => {
                let a = *self.shape(*x).last().expect("validated in forward");
                let mut dx = Vec::with_capacity(dy.len() * a);
                for &d in dy {
                    dx.extend(std::iter::repeat_n(d, a));
                }
                acc(grads, *x, &dx);
            }
            Op::Gather { x, indices } => {
                let a = *self.shape(*x).last().expect("validated in forward");
                let mut dx = vec![0.0; self.data(*x).len()];
                for (r, (&j, &d)) in indices.iter().zip(dy).enumerate() {
                    dx[r * a + j] += d;
                }
                acc(grads, *x, &dx);
            }
            Op::Embedding { table, ids } => {
                let e = *self.shape(*table).last().expect("validated in forward");
                let mut dt = vec![0.0; self.data(*table).len()];
                for (r, &id) in ids.iter().enumerate() {
                    for j in 0..e {
                        dt[id * e + j] += dy[r * e + j];
                    }
                }
                acc(grads, *table, &dt);
            }
        }
        Ok(())
    }
}

fn acc(grads: &mut [Option<Vec<f64>>], var: Var, contribution: &[f64]) {
    match &mut grads[var.0] {
        Some(g) => g.iter_mut().zip(contribution).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(contribution.to_vec()),
    }
}

fn dims4(shape: &[usize]) -> Option<(usize, usize, usize, usize)> {
    match *shape {
        [n, c, h, w] => Some((n, c, h, w)),
        [c, h, w] => Some((1, c, h, w)),
        _ => None,
    }
}

fn out_size(size: usize, k: usize, stride: usize, pad: usize) -> Result<usize, NumericsError> {
    let padded = size + 2 * pad;
    if padded < k || (padded - k) % stride != 0 {
        return Err(NumericsError::Config(format!("conv2d output size ({size} + 2*{pad} - {k}) / {stride} + 1 is not integral")));
    }
    Ok((padded - k) / stride + 1)
}

fn im2col(x: &[f64], g: &ConvGeom, cols: &mut [f64]) {
    let l = g.oh * g.ow;
    for ch in 0..g.c {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ch * g.kh + ky) * g.kw + kx;
                let dst = &mut cols[row * l..(row + 1) * l];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        dst[oy * g.ow + ox] = if iy >= 0 && iy < g.h as isize && ix >= 0 && ix < g.w as isize { x[(ch * g.h + iy as usize) * g.w + ix as usize] } else { 0.0 };
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f64], g: &ConvGeom, dx: &mut [f64]) {
    let l = g.oh * g.ow;
    for ch in 0..g.c {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ch * g.kh + ky) * g.kw + kx;
                let src = &cols[row * l..(row + 1) * l];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dx[(ch * g.h + iy as usize) * g.w + ix as usize] += src[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softmax of one logit row.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    logits.iter().map(|v| v - lse).collect()
}
