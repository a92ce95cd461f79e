use crate::agent::Trajectory;
use crate::error::{Error, Result};
use crate::world::{distance_m, Difficulty, EpisodeSpec, UavState};

/// Default success radius, meters.
pub const SUCCESS_THRESHOLD_M: f64 = 20.0;

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeResult {
    pub episode_id: String,
    pub final_position: (i32, i32),
    pub ne_m: f64,
    pub success: bool,
    pub oracle: bool,
    /// Horizontal path length, meters.
    pub path_m: f64,
    pub shortest_m: f64,
    pub steps: usize,
    pub truncated: bool,
    pub tier: Difficulty,
}

impl EpisodeResult {
    /// `success * l / max(l, p)`.
    pub fn spl_term(&self) -> f64 {
        if !self.success {
            return 0.0;
        }
        let denom = self.shortest_m.max(self.path_m);
        if denom > 0.0 {
            self.shortest_m / denom
        } else {
            1.0
        }
    }
}

/// Metrics of a visited pose sequence (start first, final pose last).
pub fn path_metrics(episode: &EpisodeSpec, poses: &[UavState], stopped: bool, cell_size: f64, threshold_m: f64) -> Result<EpisodeResult> {
    let last = poses.last().ok_or_else(|| Error::Contract(format!("episode {} has an empty trajectory", episode.id)))?;
    let goal = episode.goal_f();
    let dist = |s: &UavState| distance_m(s.pos(), goal, cell_size);
    let ne_m = dist(last);
    let oracle = poses.iter().any(|s| dist(s) <= threshold_m);
    let path_m = poses.windows(2).map(|w| distance_m(w[0].pos(), w[1].pos(), cell_size)).sum();
    Ok(EpisodeResult {
        episode_id: episode.id.clone(),
        final_position: (last.x, last.y),
        ne_m,
        success: stopped && ne_m <= threshold_m,
        oracle,
        path_m,
        shortest_m: episode.shortest_path_m,
        steps: poses.len() - 1,
        truncated: !stopped,
        tier: episode.difficulty,
    })
}

pub fn episode_metrics(traj: &Trajectory, episode: &EpisodeSpec, cell_size: f64, threshold_m: f64) -> Result<EpisodeResult> {
    if traj.episode_id != episode.id {
        return Err(Error::Contract(format!("no goal for trajectory {}: episode {} was supplied", traj.episode_id, episode.id)));
    }
    path_metrics(episode, &traj.positions(), traj.stopped, cell_size, threshold_m)
}

/// One report cell; rates are percentages.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricCell {
    pub n: usize,
    pub ne: f64,
    pub sr: f64,
    pub osr: f64,
    pub spl: f64,
}

/// Sums are taken over sorted terms so the cell does not depend on input order.
pub fn aggregate<'a>(results: impl IntoIterator<Item = &'a EpisodeResult>) -> Result<MetricCell> {
    let (mut ne, mut spl, mut sr, mut osr) = (Vec::new(), Vec::new(), 0usize, 0usize);
    for r in results {
        ne.push(r.ne_m);
        spl.push(r.spl_term());
        sr += usize::from(r.success);
        osr += usize::from(r.oracle);
    }
    if ne.is_empty() {
        return Err(Error::Contract("cannot aggregate an empty result set".into()));
    }
    let n = ne.len();
    let sorted_sum = |mut v: Vec<f64>| {
        v.sort_by(f64::total_cmp);
        v.iter().sum::<f64>()
    };
    let k = n as f64;
    Ok(MetricCell { n, ne: sorted_sum(ne) / k, sr: 100.0 * sr as f64 / k, osr: 100.0 * osr as f64 / k, spl: 100.0 * sorted_sum(spl) / k })
}
