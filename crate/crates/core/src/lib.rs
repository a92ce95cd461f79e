//! Hybrid imitation/reinforcement learning for tiered UAV navigation over
//! synthetic cities.

pub mod agent;
pub mod error;
pub mod evaluation;
pub mod harness;
pub mod mapper;
pub mod numerics;
pub mod parallel;
pub mod rng;
pub mod teacher;
pub mod training;
pub mod world;

pub use error::{Error, Result};
