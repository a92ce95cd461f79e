use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::world::{CityWorld, EpisodeSpec, GoalDescriptor, Observation, UavState};

pub const MAP_CHANNELS: usize = 4;
pub const EXPLORED: usize = 0;
pub const TRAJECTORY: usize = 1;
pub const LANDMARK_PRIOR: usize = 2;
pub const OBSTACLE_MEMORY: usize = 3;
pub const CHANNEL_NAMES: [&str; MAP_CHANNELS] = ["explored", "trajectory", "landmark_prior", "obstacle_memory"];

pub const MAP_MAGIC: &str = "htnav-map v1";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PriorConfig {
    /// Disk radius around the referenced landmark, cells.
    pub radius: f64,
    /// Weight on the descriptor's side of the landmark.
    pub inside: f64,
    /// Weight on the opposite side.
    pub outside: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self { radius: 15.0, inside: 1.0, outside: 0.3 }
    }
}

/// Whole-world top-down grid `[C, H, W]` with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct NavMap {
    pub width: usize,
    pub height: usize,
    z_max: i32,
    data: Vec<f64>,
}

impl NavMap {
    pub fn zeros(width: usize, height: usize, z_max: i32) -> Self {
        Self { width, height, z_max, data: vec![0.0; MAP_CHANNELS * width * height] }
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.width * self.height;
        &self.data[c * n..(c + 1) * n]
    }

    fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.width * self.height;
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, x: i32, y: i32) -> f64 {
        self.channel(c)[y as usize * self.width + x as usize]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![MAP_CHANNELS, self.height, self.width], self.data.clone()).expect("map shape")
    }

    /// One byte per cell for the episode-dependent channels: bit 0 explored,
    /// bit 1 trajectory, bits 2.. the remembered obstacle height.
    pub fn pack_dynamic(&self) -> Vec<u8> {
        let z = self.z_max as f64;
        (0..self.width * self.height)
            .map(|i| {
                let e = (self.channel(EXPLORED)[i] > 0.5) as u8;
                let t = (self.channel(TRAJECTORY)[i] > 0.5) as u8;
                let level = (self.channel(OBSTACLE_MEMORY)[i] * z).round() as u8;
                e | (t << 1) | (level << 2)
            })
            .collect()
    }

    /// Inverse of [`NavMap::pack_dynamic`] given the episode's prior channel.
    pub fn from_packed(width: usize, height: usize, z_max: i32, prior: &[f64], packed: &[u8]) -> Self {
        let mut m = Self::zeros(width, height, z_max);
        m.channel_mut(LANDMARK_PRIOR).copy_from_slice(prior);
        for (i, &b) in packed.iter().enumerate() {
            m.channel_mut(EXPLORED)[i] = (b & 1) as f64;
            m.channel_mut(TRAJECTORY)[i] = ((b >> 1) & 1) as f64;
            m.channel_mut(OBSTACLE_MEMORY)[i] = (b >> 2) as f64 / z_max as f64;
        }
        m
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{MAP_MAGIC}");
        let _ = writeln!(out, "dims {} {} {} {}", MAP_CHANNELS, self.height, self.width, self.z_max);
        for (c, name) in CHANNEL_NAMES.iter().enumerate() {
            let _ = writeln!(out, "channel {name}");
            for row in self.channel(c).chunks(self.width) {
                let line: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
                out.push_str(&line.join(" "));
                out.push('\n');
            }
        }
        out.push_str("end\n");
        out
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let bad = |m: String| Error::format("map dump", path, m);
        let mut lines = text.lines();
        let mut next = || lines.next().ok_or_else(|| bad("unexpected end of map dump".into()));
        if next()? != MAP_MAGIC {
            return Err(bad("missing map header".into()));
        }
        let dims: Vec<usize> = next()?
            .strip_prefix("dims ")
            .ok_or_else(|| bad("expected dims line".into()))?
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| bad(format!("bad dimension {t:?}"))))
            .collect::<Result<_>>()?;
        if dims.len() != 4 || dims[0] != MAP_CHANNELS {
            return Err(bad(format!("bad dims {dims:?}")));
        }
        let (h, w) = (dims[1], dims[2]);
        let mut m = Self::zeros(w, h, dims[3] as i32);
        for (c, name) in CHANNEL_NAMES.iter().enumerate() {
            if next()? != format!("channel {name}") {
                return Err(bad(format!("expected channel {name}")));
            }
            let mut vals = Vec::with_capacity(w * h);
            for _ in 0..h {
                for t in next()?.split_whitespace() {
                    vals.push(t.parse::<f64>().map_err(|_| bad(format!("bad value {t:?}")))?);
                }
            }
            if vals.len() != w * h {
                return Err(bad(format!("channel {name} has {} values", vals.len())));
            }
            m.channel_mut(c).copy_from_slice(&vals);
        }
        if next()? != "end" {
            return Err(bad("missing end marker".into()));
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }
}

/// Landmark prior for a descriptor: a disk around the landmark, weighted
/// `inside` on the descriptor's half-plane and `outside` elsewhere.
pub fn landmark_prior(world: &CityWorld, d: &GoalDescriptor, cfg: &PriorConfig) -> Result<Vec<f64>> {
    let lm = world.landmark(d.landmark_id).ok_or_else(|| Error::Contract(format!("descriptor references unknown landmark {}", d.landmark_id)))?;
    let (ux, uy) = d.sector.unit();
    let mut prior = vec![0.0; world.width * world.height];
    for y in 0..world.height as i32 {
        for x in 0..world.width as i32 {
            let (dx, dy) = ((x - lm.x) as f64, (y - lm.y) as f64);
            if dx * dx + dy * dy <= cfg.radius * cfg.radius {
                let along = dx * ux + dy * uy;
                prior[world.cell_index(x, y)] = if along >= -1e-9 { cfg.inside } else { cfg.outside };
            }
        }
    }
    Ok(prior)
}

pub fn init_map(world: &CityWorld, episode: &EpisodeSpec, cfg: &PriorConfig) -> Result<NavMap> {
    let prior = landmark_prior(world, &episode.descriptor, cfg)?;
    let mut m = NavMap::zeros(world.width, world.height, world.z_max);
    m.channel_mut(LANDMARK_PRIOR).copy_from_slice(&prior);
    Ok(m)
}

/// Marks visible cells explored, the UAV cell visited, and folds observed
/// obstacle heights into the memory channel.
pub fn update_map(map: &mut NavMap, state: &UavState, obs: &Observation) {
    let r = (obs.size() as i32 - 1) / 2;
    let v = obs.visible_radius.min(r);
    let z = map.z_max as f64;
    for dy in -v..=v {
        for dx in -v..=v {
            let (x, y) = (state.x + dx, state.y + dy);
            if !obs.visible(dx, dy) || x < 0 || y < 0 || x as usize >= map.width || y as usize >= map.height {
                continue;
            }
            let i = y as usize * map.width + x as usize;
            map.channel_mut(EXPLORED)[i] = 1.0;
            let h = obs.height_at_offset(dx, dy) as f64 / z;
            let mem = &mut map.channel_mut(OBSTACLE_MEMORY)[i];
            *mem = mem.max(h);
        }
    }
    if state.x >= 0 && state.y >= 0 && (state.x as usize) < map.width && (state.y as usize) < map.height {
        let i = state.y as usize * map.width + state.x as usize;
        map.channel_mut(TRAJECTORY)[i] = 1.0;
        map.channel_mut(EXPLORED)[i] = 1.0;
    }
}
