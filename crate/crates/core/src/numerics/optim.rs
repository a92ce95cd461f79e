use super::params::{ParamGrads, ParamStore};
use super::NumericsError;

/// Adam with optional decoupled weight decay (AdamW when `weight_decay > 0`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
    pub step_count: u64,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = store.blocks().iter().map(|b| vec![0.0; b.value.len()]).collect();
        Self { first_moment: zeros.clone(), second_moment: zeros, step_count: 0 }
    }

    pub fn matches(&self, store: &ParamStore) -> bool {
        self.first_moment.len() == store.len() && store.blocks().iter().zip(&self.first_moment).zip(&self.second_moment).all(|((b, m), v)| b.value.len() == m.len() && m.len() == v.len())
    }
}

/// One bias-corrected Adam update. Blocks without a gradient are left untouched.
///
/// Nothing is written if any gradient is non-finite; the error names the block.
pub fn adam_step(store: &mut ParamStore, grads: &ParamGrads, state: &mut AdamState, cfg: &AdamConfig) -> Result<(), NumericsError> {
    if !(cfg.lr > 0.0) {
        return Err(NumericsError::Config(format!("learning rate must be positive, got {}", cfg.lr)));
    }
    if !state.matches(store) || grads.len() != store.len() {
        return Err(NumericsError::Contract("optimizer state does not match parameter store".into()));
    }
    for id in store.ids() {
        if let Some(g) = grads.get(id) {
            if g.len() != store.value(id).len() {
                return Err(NumericsError::Shape { op: "adam_step", left: store.value(id).shape().to_vec(), right: vec![g.len()] });
            }
            if let Some(bad) = g.iter().position(|v| !v.is_finite()) {
                return Err(NumericsError::NonFinite { context: format!("gradient of parameter block '{}' at entry {bad}", store.block(id).name) });
            }
        }
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let Some(g) = grads.get(id) else { continue };
        let decay = store.block(id).decay && cfg.weight_decay > 0.0;
        let m = &mut state.first_moment[id.index()];
        let v = &mut state.second_moment[id.index()];
        let p = store.value_mut(id).data_mut();
        for j in 0..p.len() {
            if decay {
                p[j] *= 1.0 - cfg.lr * cfg.weight_decay;
            }
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
            let mh = m[j] / bc1;
            let vh = v[j] / bc2;
            p[j] -= cfg.lr * mh / (vh.sqrt() + cfg.eps);
        }
    }
    Ok(())
}
