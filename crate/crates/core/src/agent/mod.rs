//! Policy network, tiered waypoint/action controller and episode runner.

mod controller;
mod log;
mod model;

pub use controller::{
    advance_waypoint, choose_action, needs_replan, run_episode, tiered_step, ControllerState, Decision, DecodeMode, EpisodeOptions, ModelAgent, Navigator, RandomAgent, ScriptedAgent, StepInputs,
    StepRecord, StepView, TeacherAgent, Trajectory,
};
pub use log::{log_to_bytes, read_log, write_log, LabelRow, LogRow, LABEL_COLUMNS, LOG_COLUMNS};
pub use model::{argmax, clamp_to_grid, ego_patch, pose_features, waypoint_context, EnvDims, ForwardVars, HeadOutputs, HeadVars, Policy, PolicyBatch, PolicyConfig, POSE_FEATURES, WAYPOINT_CONTEXT};

#[cfg(test)]
mod tests;
