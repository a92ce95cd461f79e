//! Incremental navigation map and its residual + SCConv encoder.

mod encoder;
mod navmap;

pub use encoder::{pad_odd, residual_block, scconv_fuse, ConvBn, EncoderConfig, MapEncoder, ScConvParams, Stage, ENCODER_INPUT_CHANNELS};
pub use navmap::{init_map, landmark_prior, update_map, NavMap, PriorConfig, CHANNEL_NAMES, EXPLORED, LANDMARK_PRIOR, MAP_CHANNELS, MAP_MAGIC, OBSTACLE_MEMORY, TRAJECTORY};
