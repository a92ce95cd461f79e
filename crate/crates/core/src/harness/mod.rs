//! Configuration, commands, run manifests and trajectory replay.

mod config;
mod manifest;
mod pipeline;
mod replay;

pub use config::{parse_config, schema, ExperimentConfig, KeySpec, Kind};
pub use manifest::{relative_files, RunManifest, CODE_VERSION, CONFIG_FILE, MANIFEST_FILE};
pub use pipeline::{
    build_corpus, evaluate, generate_worlds, load_worlds, policy_text, read_policy, reference_variant, run_command, run_sweep, stage1_curve_csv, stage2_episodes, train_il, train_rl, Command,
    ModelVariant, SweepOutcome, POLICY_FILE,
};
pub use replay::{replay, Replay, WaypointEvent, REPLAY_COLUMNS};
