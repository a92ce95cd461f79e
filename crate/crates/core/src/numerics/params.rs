use std::collections::BTreeMap;

use rand::Rng;
use sha2::{Digest, Sha256};

use super::{NumericsError, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A named learnable tensor. `decay` marks blocks subject to weight decay.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamBlock {
    pub name: String,
    pub value: Tensor,
    pub decay: bool,
}

/// Per-channel running mean/variance for batch normalization.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunningStats {
    stats: Option<(Vec<f64>, Vec<f64>)>,
}

impl RunningStats {
    pub fn from_values(mean: Vec<f64>, var: Vec<f64>) -> Self {
        Self { stats: Some((mean, var)) }
    }

    pub fn values(&self) -> Option<(&[f64], &[f64])> {
        self.stats.as_ref().map(|(m, v)| (m.as_slice(), v.as_slice()))
    }

    pub fn is_populated(&self) -> bool {
        self.stats.is_some()
    }

    /// Exponential moving average; the first batch initializes the stats.
    pub fn update(&mut self, mean: &[f64], var: &[f64], momentum: f64) {
        match &mut self.stats {
            Some((m, v)) => {
                for (r, b) in m.iter_mut().zip(mean) {
                    *r = (1.0 - momentum) * *r + momentum * b;
                }
                for (r, b) in v.iter_mut().zip(var) {
                    *r = (1.0 - momentum) * *r + momentum * b;
                }
            }
            None => self.stats = Some((mean.to_vec(), var.to_vec())),
        }
    }
}

/// All learnable parameters of a model plus batch-norm running statistics.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    blocks: Vec<ParamBlock>,
    bn: BTreeMap<String, RunningStats>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, value: Tensor, decay: bool) -> Result<ParamId, NumericsError> {
        if name.is_empty() || name.contains(char::is_whitespace) {
            return Err(NumericsError::Config(format!("invalid parameter name {name:?}")));
        }
        if self.id(name).is_some() {
            return Err(NumericsError::Config(format!("duplicate parameter block {name}")));
        }
        self.blocks.push(ParamBlock { name: name.to_string(), value, decay });
        Ok(ParamId(self.blocks.len() - 1))
    }

    /// Fan-in scaled uniform weights, `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn add_uniform<R: Rng>(&mut self, name: &str, shape: &[usize], fan_in: usize, rng: &mut R) -> Result<ParamId, NumericsError> {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
        self.add(name, Tensor::new(shape.to_vec(), data)?, true)
    }

    pub fn add_const(&mut self, name: &str, shape: &[usize], value: f64) -> Result<ParamId, NumericsError> {
        self.add(name, Tensor::full(shape, value), false)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.blocks.iter().position(|b| b.name == name).map(ParamId)
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.blocks[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.blocks[id.0].value
    }

    pub fn block(&self, id: ParamId) -> &ParamBlock {
        &self.blocks[id.0]
    }

    pub fn blocks(&self) -> &[ParamBlock] {
        &self.blocks
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.blocks.len()).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.blocks.iter().map(|b| b.value.len()).sum()
    }

    pub fn bn_stats(&self, name: &str) -> &RunningStats {
        static EMPTY: RunningStats = RunningStats { stats: None };
        self.bn.get(name).unwrap_or(&EMPTY)
    }

    pub fn bn_stats_mut(&mut self, name: &str) -> &mut RunningStats {
        self.bn.entry(name.to_string()).or_default()
    }

    pub fn bn_entries(&self) -> impl Iterator<Item = (&String, &RunningStats)> {
        self.bn.iter()
    }

    pub(crate) fn set_bn(&mut self, name: String, stats: RunningStats) {
        self.bn.insert(name, stats);
    }

    /// SHA-256 over names, shapes, bit patterns and running stats.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for b in &self.blocks {
            h.update(b.name.as_bytes());
            for d in b.value.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for v in b.value.data() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        for (name, s) in &self.bn {
            h.update(name.as_bytes());
            if let Some((m, v)) = s.values() {
                for x in m.iter().chain(v) {
                    h.update(x.to_bits().to_le_bytes());
                }
            }
        }
        hex(&h.finalize())
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Gradient buffers aligned with the blocks of a [`ParamStore`]; `None` marks
/// blocks that received no gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGrads {
    grads: Vec<Option<Vec<f64>>>,
}

impl ParamGrads {
    pub fn empty(store: &ParamStore) -> Self {
        Self { grads: vec![None; store.len()] }
    }

    pub fn accumulate(&mut self, id: ParamId, g: &[f64]) {
        match &mut self.grads[id.0] {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            slot @ None => *slot = Some(g.to_vec()),
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    /// Adds `factor * other` block by block.
    pub fn add_scaled(&mut self, other: &ParamGrads, factor: f64) {
        for (i, g) in other.grads.iter().enumerate() {
            if let Some(g) = g {
                let scaled: Vec<f64> = g.iter().map(|v| v * factor).collect();
                self.accumulate(ParamId(i), &scaled);
            }
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.grads.iter().flatten().flat_map(|g| g.iter()).map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Rescales all gradients so the global norm is at most `max_norm`.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            let s = max_norm / norm;
            self.grads.iter_mut().flatten().for_each(|g| g.iter_mut().for_each(|v| *v *= s));
        }
        norm
    }

    /// Drops the gradients of the given blocks.
    pub fn zero_blocks(&mut self, ids: impl IntoIterator<Item = ParamId>) {
        for id in ids {
            self.grads[id.0] = None;
        }
    }

    pub fn nonzero(&self, id: ParamId) -> bool {
        self.get(id).is_some_and(|g| g.iter().any(|v| *v != 0.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::new();
        s.add_const("a", &[2], 0.0).unwrap();
        assert!(s.add_const("a", &[2], 0.0).is_err());
        assert!(s.add_const("has space", &[1], 0.0).is_err());
    }

    #[test]
    fn running_stats_ema() {
        let mut r = RunningStats::default();
        assert!(!r.is_populated());
        r.update(&[1.0], &[2.0], 0.1);
        r.update(&[2.0], &[4.0], 0.1);
        let (m, v) = r.values().unwrap();
        assert!((m[0] - 1.1).abs() < 1e-12);
        assert!((v[0] - 2.2).abs() < 1e-12);
    }

    #[test]
    fn clip_global_norm_rescales() {
        let mut s = ParamStore::new();
        let a = s.add_const("a", &[2], 0.0).unwrap();
        let mut g = ParamGrads::empty(&s);
        g.accumulate(a, &[3.0, 4.0]);
        assert_eq!(g.clip_global_norm(1.0), 5.0);
        assert!((g.global_norm() - 1.0).abs() < 1e-12);
    }
}
