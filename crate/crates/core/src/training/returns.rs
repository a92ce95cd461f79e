use crate::error::{Error, Result};

/// Suffix sums `G_t = sum_k gamma^k r_{t+k}`.
pub fn discounted_return(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + gamma * acc;
        out[t] = acc;
    }
    out
}

/// Per-transition inputs of the advantage estimator, in collection order.
///
/// `next_values[t]` is `V(s_{t+1})`; for a transition that truncates an
/// episode it is the bootstrap value of the state the episode was cut at.
/// `dones[t]` marks terminal transitions (no bootstrap) and `episode_ends[t]`
/// marks the last transition of each episode, terminal or truncated.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GaeInput<'a> {
    pub rewards: &'a [f64],
    pub values: &'a [f64],
    pub next_values: &'a [f64],
    pub dones: &'a [bool],
    pub episode_ends: &'a [bool],
}

/// Generalized advantage estimation. Returns `(advantages, value_targets)`;
/// advantages are not normalized here.
pub fn compute_gae(input: &GaeInput<'_>, gamma: f64, lambda: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = input.rewards.len();
    let lens = [input.values.len(), input.next_values.len(), input.dones.len(), input.episode_ends.len()];
    if lens.iter().any(|&l| l != n) {
        return Err(Error::Contract(format!("GAE inputs have mismatched lengths: rewards {n}, others {lens:?}")));
    }
    if let Some(t) = (0..n).find(|&t| input.dones[t] && !input.episode_ends[t]) {
        return Err(Error::Contract(format!("transition {t} is terminal but does not end its episode")));
    }
    let mut adv = vec![0.0; n];
    let mut acc = 0.0;
    for t in (0..n).rev() {
        if input.episode_ends[t] {
            acc = 0.0;
        }
        let boot = if input.dones[t] { 0.0 } else { input.next_values[t] };
        let delta = input.rewards[t] + gamma * boot - input.values[t];
        acc = delta + gamma * lambda * acc;
        adv[t] = acc;
    }
    let targets = adv.iter().zip(input.values).map(|(a, v)| a + v).collect();
    Ok((adv, targets))
}

/// Shifts and scales to zero mean and unit variance; a constant batch maps to zeros.
pub fn normalize_advantages(adv: &mut [f64]) {
    if adv.is_empty() {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    for a in adv.iter_mut() {
        *a = if std > 1e-12 { (*a - mean) / std } else { 0.0 };
    }
}
