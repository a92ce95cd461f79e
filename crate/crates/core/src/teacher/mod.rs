//! Expert demonstrator: A* planning, waypoint extraction and labeled
//! demonstration corpora.

mod dataset;
mod demo;
mod planner;

pub use dataset::{build_dataset, load_corpus, save_corpus, Corpus, CorpusManifest, DatasetConfig};
pub use demo::{build_demonstration, DemoConfig, DemoStep, Demonstration, ProgressLabel};
pub use planner::{extract_waypoints, plan_path, ExpertPath, WaypointConfig, MOVE_COST, TURN_COST};

#[cfg(test)]
mod tests;
