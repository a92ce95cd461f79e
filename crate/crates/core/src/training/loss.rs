use crate::error::{Error, Result};
use crate::numerics::{Graph, NumericsError, Tensor, Var};

/// `min(r A, clip(r, 1 - eps, 1 + eps) A)` with `r = exp(lp_new - lp_old)`.
pub fn ppo_clip_objective(log_prob_new: f64, log_prob_old: f64, advantage: f64, eps: f64) -> f64 {
    let r = (log_prob_new - log_prob_old).exp();
    (r * advantage).min(r.clamp(1.0 - eps, 1.0 + eps) * advantage)
}

/// Per-sample clipped surrogate on the graph, `[N]` from `log_prob_new: [N]`.
pub fn ppo_clip_graph(g: &mut Graph, log_prob_new: Var, log_prob_old: &[f64], advantages: &[f64], eps: f64) -> Result<Var, NumericsError> {
    let n = log_prob_old.len();
    let old = g.constant(Tensor::vector(log_prob_old.to_vec()));
    let adv = g.constant(Tensor::vector(advantages.to_vec()));
    let diff = g.sub(log_prob_new, old)?;
    let ratio = g.exp(diff)?;
    let unclipped = g.mul(ratio, adv)?;
    let clipped_ratio = g.clip_value(ratio, 1.0 - eps, 1.0 + eps)?;
    let clipped = g.mul(clipped_ratio, adv)?;
    debug_assert_eq!(g.value(unclipped).len(), n);
    g.minimum(unclipped, clipped)
}

/// Goal MSE plus progress MSE, each averaged over batch and coordinates.
pub fn il_loss(goal_pred: &[(f64, f64)], goal: &[(f64, f64)], progress_pred: &[f64], progress: &[f64]) -> f64 {
    let g = goal_pred.iter().zip(goal).map(|(a, b)| (a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sum::<f64>() / (2 * goal.len()).max(1) as f64;
    let p = progress_pred.iter().zip(progress).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / progress.len().max(1) as f64;
    g + p
}

pub fn il_loss_graph(g: &mut Graph, goal_pred: Var, goal: Tensor, progress_pred: Var, progress: Tensor) -> Result<Var, NumericsError> {
    let lg = g.mse(goal_pred, goal)?;
    let lp = g.mse(progress_pred, progress)?;
    g.add(lg, lp)
}

pub fn value_loss(pred: &[f64], target: &[f64]) -> f64 {
    pred.iter().zip(target).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / target.len().max(1) as f64
}

pub fn check_lambda_rl(lambda_rl: f64) -> Result<()> {
    if (0.0..=1.0).contains(&lambda_rl) {
        Ok(())
    } else {
        Err(Error::Config(format!("lambda_rl = {lambda_rl} is out of range: λ_RL ∈ [0,1]")))
    }
}

/// Piecewise total: `L_IL + L_V + lambda L_RL` with RL enabled, else `L_IL`.
pub fn total_loss(l_il: f64, l_v: f64, l_rl: f64, lambda_rl: f64, rl_enabled: bool) -> Result<f64> {
    check_lambda_rl(lambda_rl)?;
    Ok(if rl_enabled { l_il + l_v + lambda_rl * l_rl } else { l_il })
}

/// Components of one optimization step, as logged.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossReport {
    pub l_il: f64,
    pub l_v: f64,
    pub l_rl: f64,
    pub l_total: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub mean_ratio: f64,
}

impl LossReport {
    /// Whether `l_total` matches its parts under the given branch.
    pub fn is_consistent(&self, lambda_rl: f64, rl_enabled: bool) -> bool {
        total_loss(self.l_il, self.l_v, self.l_rl, lambda_rl, rl_enabled).is_ok_and(|t| (t - self.l_total).abs() <= 1e-12)
    }
}
