use std::collections::VecDeque;

use rand::Rng as _;

use super::{CityWorld, Landmark};
use crate::error::{Error, Result};
use crate::rng::substream;

#[derive(Clone, Debug, PartialEq)]
pub struct WorldConfig {
    pub width: usize,
    pub height: usize,
    pub cell_size: f64,
    pub z_min: i32,
    pub z_max: i32,
    pub cruise_alt: i32,
    pub r_base: i32,
    pub r_gain: i32,
    pub landmarks: usize,
    pub landmark_radius_min: i32,
    pub landmark_radius_max: i32,
    /// Minimum center-to-center landmark distance, cells.
    pub landmark_spacing: f64,
    /// Target fraction of cells covered by buildings.
    pub obstacle_density: f64,
    pub building_min: usize,
    pub building_max: usize,
    /// Fraction of buildings as tall as `z_max`, which cannot be overflown.
    pub tall_fraction: f64,
    pub max_retries: usize,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            width: 96,
            height: 96,
            cell_size: 5.0,
            z_min: 1,
            z_max: 8,
            cruise_alt: 4,
            r_base: 4,
            r_gain: 2,
            landmarks: 12,
            landmark_radius_min: 1,
            landmark_radius_max: 2,
            landmark_spacing: 10.0,
            obstacle_density: 0.25,
            building_min: 2,
            building_max: 6,
            tall_fraction: 0.2,
            max_retries: 50,
        }
    }
}

impl WorldConfig {
    /// 32x32 preset used by the acceptance suite and quick experiments.
    pub fn desk() -> Self {
        Self {
            width: 32,
            height: 32,
            z_max: 6,
            cruise_alt: 3,
            r_base: 2,
            r_gain: 1,
            landmarks: 6,
            landmark_spacing: 7.0,
            obstacle_density: 0.2,
            building_max: 4,
            tall_fraction: 0.25,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.width < 32 || self.height < 32 {
            return fail(format!("world must be at least 32x32, got {}x{}", self.width, self.height));
        }
        if self.landmarks < 2 {
            return fail(format!("at least 2 landmarks required, got {}", self.landmarks));
        }
        if !(self.z_min >= 0 && self.z_min <= self.cruise_alt && self.cruise_alt <= self.z_max) {
            return fail(format!("need 0 <= z_min <= cruise_alt <= z_max, got {} {} {}", self.z_min, self.cruise_alt, self.z_max));
        }
        if self.cruise_alt < 1 {
            return fail("cruise altitude must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.obstacle_density) || !(0.0..=1.0).contains(&self.tall_fraction) {
            return fail("obstacle_density must be in [0,1) and tall_fraction in [0,1]".into());
        }
        if self.building_min == 0 || self.building_min > self.building_max {
            return fail("building sizes must satisfy 1 <= min <= max".into());
        }
        if self.landmark_radius_min < 0 || self.landmark_radius_min > self.landmark_radius_max {
            return fail("landmark radii must satisfy 0 <= min <= max".into());
        }
        if !(self.cell_size > 0.0) {
            return fail("cell_size must be positive".into());
        }
        Ok(())
    }
}

/// Deterministic city for `(seed, cfg)`. Attempts that leave some landmark pair
/// disconnected at cruise altitude are discarded and regenerated.
pub fn generate_world(seed: u64, cfg: &WorldConfig) -> Result<CityWorld> {
    cfg.validate()?;
    for attempt in 0..cfg.max_retries.max(1) {
        let mut rng = substream(seed, "world", attempt as u64);
        let (w, h) = (cfg.width as i32, cfg.height as i32);
        let mut heights = vec![0i32; cfg.width * cfg.height];
        let target = (cfg.obstacle_density * (cfg.width * cfg.height) as f64).round() as usize;
        let mut covered = 0usize;
        let mut tries = 0;
        while covered < target && tries < 100_000 {
            tries += 1;
            let bw = rng.gen_range(cfg.building_min..=cfg.building_max) as i32;
            let bh = rng.gen_range(cfg.building_min..=cfg.building_max) as i32;
            let x0 = rng.gen_range(0..=(w - bw));
            let y0 = rng.gen_range(0..=(h - bh));
            let level = if rng.gen_bool(cfg.tall_fraction) { cfg.z_max } else { rng.gen_range(1..cfg.z_max.max(2)) };
            for y in y0..y0 + bh {
                for x in x0..x0 + bw {
                    let c = &mut heights[(y * w + x) as usize];
                    if *c == 0 {
                        covered += 1;
                    }
                    *c = (*c).max(level);
                }
            }
        }
        let mut landmarks: Vec<Landmark> = Vec::with_capacity(cfg.landmarks);
        let margin = cfg.landmark_radius_max + 1;
        let mut placed = true;
        for id in 0..cfg.landmarks {
            let mut spot = None;
            for _ in 0..2000 {
                let x = rng.gen_range(margin..w - margin);
                let y = rng.gen_range(margin..h - margin);
                let far = landmarks.iter().all(|l| (((l.x - x).pow(2) + (l.y - y).pow(2)) as f64).sqrt() >= cfg.landmark_spacing);
                if far {
                    spot = Some((x, y));
                    break;
                }
            }
            let Some((x, y)) = spot else {
                placed = false;
                break;
            };
            let radius = rng.gen_range(cfg.landmark_radius_min..=cfg.landmark_radius_max);
            for yy in (y - radius).max(0)..=(y + radius).min(h - 1) {
                for xx in (x - radius).max(0)..=(x + radius).min(w - 1) {
                    if (xx - x).pow(2) + (yy - y).pow(2) <= radius.pow(2) {
                        heights[(yy * w + xx) as usize] = 0;
                    }
                }
            }
            landmarks.push(Landmark { id, token: format!("lm{id:02}"), x, y, radius });
        }
        if !placed {
            continue;
        }
        let world = CityWorld::new(format!("w{seed}"), cfg.width, cfg.height, cfg.cell_size, (cfg.z_min, cfg.z_max), cfg.cruise_alt, (cfg.r_base, cfg.r_gain), heights, landmarks)?;
        let reach = reachable_at_altitude(&world, cfg.cruise_alt, (world.landmarks()[0].x, world.landmarks()[0].y));
        if world.landmarks().iter().all(|l| reach[world.cell_index(l.x, l.y)]) {
            return Ok(world);
        }
    }
    Err(Error::Generation(format!("seed {seed}: landmarks not connected at cruise altitude after {} attempts", cfg.max_retries)))
}

/// Cells 4-connected to `from` through cells whose obstacles are below `alt`.
pub(crate) fn reachable_at_altitude(world: &CityWorld, alt: i32, from: (i32, i32)) -> Vec<bool> {
    let mut seen = vec![false; world.width * world.height];
    if !world.in_bounds(from.0, from.1) || world.height_at(from.0, from.1) >= alt {
        return seen;
    }
    let mut queue = VecDeque::from([from]);
    seen[world.cell_index(from.0, from.1)] = true;
    while let Some((x, y)) = queue.pop_front() {
        for (dx, dy) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
            let (nx, ny) = (x + dx, y + dy);
            if world.in_bounds(nx, ny) && world.height_at(nx, ny) < alt {
                let i = world.cell_index(nx, ny);
                if !seen[i] {
                    seen[i] = true;
                    queue.push_back((nx, ny));
                }
            }
        }
    }
    seen
}

/// Whether `a` and `b` are joined by a 4-connected path flyable at altitude `alt`.
pub fn connected_at_altitude(world: &CityWorld, alt: i32, a: (i32, i32), b: (i32, i32)) -> bool {
    world.in_bounds(b.0, b.1) && reachable_at_altitude(world, alt, a)[world.cell_index(b.0, b.1)]
}
