use super::{CityWorld, UavState};
use crate::numerics::Tensor;

/// Relative height, landmark footprint, out-of-bounds mask.
pub const OBS_CHANNELS: usize = 3;

/// Top-down patch centered on the UAV, axis-aligned with the world.
///
/// `patch[c][row][col]` covers world cell `(x + col - R, y + row - R)` with
/// `R = (P - 1) / 2`.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub patch: Tensor,
    pub center: (i32, i32),
    pub altitude: i32,
    pub visible_radius: i32,
    pub z_max: i32,
}

impl Observation {
    pub fn size(&self) -> usize {
        self.patch.shape()[1]
    }

    /// Whether patch offset `(dx, dy)` lies inside the visible disk.
    pub fn visible(&self, dx: i32, dy: i32) -> bool {
        dx * dx + dy * dy <= self.visible_radius * self.visible_radius
    }

    /// Absolute obstacle height recovered from the relative-height channel.
    pub fn height_at_offset(&self, dx: i32, dy: i32) -> i32 {
        let r = (self.size() as i32 - 1) / 2;
        let p = self.size();
        let rel = self.patch.data()[(dy + r) as usize * p + (dx + r) as usize];
        (rel * 2.0 * self.z_max as f64 - self.z_max as f64 + self.altitude as f64).round() as i32
    }
}

/// Relative height maps `h - z` from `[-z_max, z_max]` onto `[0, 1]`; cells
/// outside the visible disk carry zeros in the height and landmark channels.
pub fn render_observation(world: &CityWorld, state: &UavState) -> Observation {
    let p = world.patch_size();
    let r = (p as i32 - 1) / 2;
    let vis = world.visible_radius(state.z);
    let zmax = world.z_max as f64;
    let mut data = vec![0.0; OBS_CHANNELS * p * p];
    for row in 0..p {
        let dy = row as i32 - r;
        for col in 0..p {
            let dx = col as i32 - r;
            let (x, y) = (state.x + dx, state.y + dy);
            let i = row * p + col;
            if !world.in_bounds(x, y) {
                data[2 * p * p + i] = 1.0;
                continue;
            }
            if dx * dx + dy * dy > vis * vis {
                continue;
            }
            let rel = (world.height_at(x, y) - state.z) as f64;
            data[i] = ((rel + zmax) / (2.0 * zmax)).clamp(0.0, 1.0);
            if world.is_landmark_cell(x, y) {
                data[p * p + i] = 1.0;
            }
        }
    }
    Observation { patch: Tensor::new(vec![OBS_CHANNELS, p, p], data).expect("patch shape"), center: (state.x, state.y), altitude: state.z, visible_radius: vis, z_max: world.z_max }
}
