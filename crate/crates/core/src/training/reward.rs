use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::world::{CityWorld, UavState};

/// Which point the heading term aims at.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeadingReference {
    FinalGoal,
    CurrentWaypoint,
}

impl std::str::FromStr for HeadingReference {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "final_goal" => Ok(Self::FinalGoal),
            "current_waypoint" => Ok(Self::CurrentWaypoint),
            other => Err(Error::Config(format!("unknown heading reference {other:?} (final_goal|current_waypoint)"))),
        }
    }
}

impl std::fmt::Display for HeadingReference {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::FinalGoal => "final_goal",
            Self::CurrentWaypoint => "current_waypoint",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RewardConfig {
    /// Weight per meter of distance gained.
    pub alpha: f64,
    pub beta: f64,
    pub eta: f64,
    /// Constant step penalty, non-positive.
    pub delta: f64,
    /// Goal-bonus radius, meters.
    pub d_goal: f64,
    pub r_min: f64,
    pub r_max: f64,
    pub heading_reference: HeadingReference,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self { alpha: 1.0, beta: 0.5, eta: 10.0, delta: -0.01, d_goal: 10.0, r_min: -5.0, r_max: 5.0, heading_reference: HeadingReference::FinalGoal }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.r_min < self.r_max) {
            return Err(Error::Config(format!("reward clip bounds need r_min < r_max, got [{}, {}]", self.r_min, self.r_max)));
        }
        if !(self.d_goal > 0.0) {
            return Err(Error::Config(format!("reward.d_goal must be positive, got {}", self.d_goal)));
        }
        if !(self.alpha >= 0.0 && self.beta >= 0.0 && self.eta >= 0.0) {
            return Err(Error::Config("reward weights alpha, beta, eta must be non-negative".into()));
        }
        if !(self.delta <= 0.0) {
            return Err(Error::Config(format!("reward.delta is a penalty and must be <= 0, got {}", self.delta)));
        }
        Ok(())
    }
}

/// Absolute angular difference wrapped into `[0, pi]`; exactly symmetric in its arguments.
pub fn wrapped_angle_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).abs().rem_euclid(2.0 * PI);
    if d > PI {
        2.0 * PI - d
    } else {
        d
    }
}

/// The four additive terms before clipping, and the clipped result.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RewardTerms {
    pub distance: f64,
    pub heading: f64,
    pub goal: f64,
    pub step: f64,
    pub raw: f64,
    pub clipped: f64,
}

/// Shaped reward with the heading term aimed at `heading_target` (cells).
///
/// At the target itself the desired heading is undefined and the heading
/// difference is taken as zero.
pub fn reward_terms(prev: &UavState, state: &UavState, goal: (f64, f64), heading_target: (f64, f64), cell_size: f64, cfg: &RewardConfig) -> RewardTerms {
    let dist = |s: &UavState| {
        let (x, y) = s.pos();
        ((x - goal.0).powi(2) + (y - goal.1).powi(2)).sqrt() * cell_size
    };
    let (d_prev, d_now) = (dist(prev), dist(state));
    let (x, y) = state.pos();
    let (tx, ty) = (heading_target.0 - x, heading_target.1 - y);
    let dtheta = if tx == 0.0 && ty == 0.0 { 0.0 } else { wrapped_angle_diff(state.heading.angle(), ty.atan2(tx)) };
    let distance = cfg.alpha * (d_prev - d_now);
    let heading = cfg.beta * (1.0 - dtheta / PI);
    let goal = if d_now < cfg.d_goal { cfg.eta } else { 0.0 };
    let raw = distance + heading + goal + cfg.delta;
    RewardTerms { distance, heading, goal, step: cfg.delta, raw, clipped: raw.clamp(cfg.r_min, cfg.r_max) }
}

/// Clipped shaped reward for the transition `prev -> state`, heading toward the goal.
pub fn compute_reward(prev: &UavState, state: &UavState, goal: (f64, f64), world: &CityWorld, cfg: &RewardConfig) -> f64 {
    reward_terms(prev, state, goal, goal, world.cell_size, cfg).clipped
}

/// As [`compute_reward`], resolving the heading target from the configured reference.
pub fn compute_reward_with_waypoint(prev: &UavState, state: &UavState, goal: (f64, f64), waypoint: (f64, f64), world: &CityWorld, cfg: &RewardConfig) -> f64 {
    let target = match cfg.heading_reference {
        HeadingReference::FinalGoal => goal,
        HeadingReference::CurrentWaypoint => waypoint,
    };
    reward_terms(prev, state, goal, target, world.cell_size, cfg).clipped
}
