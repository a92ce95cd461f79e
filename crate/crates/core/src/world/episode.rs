use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng as _;

use super::{CityWorld, Heading, UavState};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::teacher::plan_path;

/// Compass sector of the goal relative to its landmark, counter-clockwise from east.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Sector {
    E,
    NE,
    N,
    NW,
    W,
    SW,
    S,
    SE,
}

impl Sector {
    pub const ALL: [Sector; 8] = [Sector::E, Sector::NE, Sector::N, Sector::NW, Sector::W, Sector::SW, Sector::S, Sector::SE];
    pub const COUNT: usize = 8;

    pub fn index(self) -> usize {
        self as usize
    }

    /// Center direction of the 45-degree wedge.
    pub fn angle(self) -> f64 {
        self.index() as f64 * PI / 4.0
    }

    pub fn unit(self) -> (f64, f64) {
        (self.angle().cos(), self.angle().sin())
    }

    fn name(self) -> &'static str {
        ["E", "NE", "N", "NW", "W", "SW", "S", "SE"][self.index()]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Band {
    Near,
    Mid,
    Far,
}

impl Band {
    pub const ALL: [Band; 3] = [Band::Near, Band::Mid, Band::Far];
    pub const COUNT: usize = 3;

    pub fn index(self) -> usize {
        self as usize
    }

    fn name(self) -> &'static str {
        ["near", "mid", "far"][self.index()]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Difficulty {
    Easy,
    Medium,
    Hard,
}

impl Difficulty {
    pub const ALL: [Difficulty; 3] = [Difficulty::Easy, Difficulty::Medium, Difficulty::Hard];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        ["easy", "medium", "hard"][self.index()]
    }
}

macro_rules! named_enum_io {
    ($t:ty, $what:literal) => {
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }

        impl FromStr for $t {
            type Err = String;

            fn from_str(s: &str) -> std::result::Result<Self, String> {
                Self::ALL.into_iter().find(|v| v.name() == s).ok_or_else(|| format!("unknown {} {s:?}", $what))
            }
        }
    };
}

named_enum_io!(Sector, "sector");
named_enum_io!(Band, "distance band");
named_enum_io!(Difficulty, "difficulty");

/// Structured stand-in for a natural-language goal description.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct GoalDescriptor {
    pub landmark_id: usize,
    pub sector: Sector,
    pub band: Band,
    pub tag: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeSpec {
    pub id: String,
    pub world_id: String,
    pub start: UavState,
    pub goal: (i32, i32),
    pub descriptor: GoalDescriptor,
    pub difficulty: Difficulty,
    /// Horizontal length of the teacher path, meters.
    pub shortest_path_m: f64,
    pub max_steps: usize,
}

impl EpisodeSpec {
    pub fn goal_f(&self) -> (f64, f64) {
        (self.goal.0 as f64, self.goal.1 as f64)
    }

    /// Straight-line start-to-goal distance in cells.
    pub fn straight_line_cells(&self) -> f64 {
        let (dx, dy) = ((self.start.x - self.goal.0) as f64, (self.start.y - self.goal.1) as f64);
        (dx * dx + dy * dy).sqrt()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeConfig {
    /// Lower straight-line bounds (cells) of easy, medium and hard; each tier ends where the next begins.
    pub tier_bounds: [f64; 3],
    /// Radius brackets (cells) of near, mid and far: `[b0,b1)`, `[b1,b2)`, `[b2,b3)`.
    pub band_bounds: [f64; 4],
    pub budget_factor: f64,
    pub tags: usize,
    pub max_retries: usize,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self { tier_bounds: [8.0, 24.0, 48.0], band_bounds: [3.0, 6.0, 10.0, 15.0], budget_factor: 4.0, tags: 4, max_retries: 500 }
    }
}

impl EpisodeConfig {
    /// Brackets scaled to the 32x32 desk world.
    pub fn desk() -> Self {
        Self { tier_bounds: [6.0, 12.0, 20.0], band_bounds: [2.0, 4.0, 6.0, 8.0], ..Self::default() }
    }

    pub fn bracket(&self, tier: Difficulty) -> (f64, f64) {
        let b = self.tier_bounds;
        match tier {
            Difficulty::Easy => (b[0], b[1]),
            Difficulty::Medium => (b[1], b[2]),
            Difficulty::Hard => (b[2], f64::INFINITY),
        }
    }

    pub fn band_range(&self, band: Band) -> (f64, f64) {
        (self.band_bounds[band.index()], self.band_bounds[band.index() + 1])
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.tier_bounds;
        let b = self.band_bounds;
        if !(t[0] >= 0.0 && t[0] < t[1] && t[1] < t[2]) {
            return Err(Error::Config(format!("tier bounds must increase, got {t:?}")));
        }
        if !(b[0] > 0.0 && b[0] < b[1] && b[1] < b[2] && b[2] < b[3]) {
            return Err(Error::Config(format!("band bounds must increase from a positive start, got {b:?}")));
        }
        if !(self.budget_factor >= 1.0) || self.tags == 0 {
            return Err(Error::Config("budget_factor must be >= 1 and tags >= 1".into()));
        }
        Ok(())
    }
}

/// Draws a teacher-feasible episode of the requested tier.
pub fn sample_episode(world: &CityWorld, tier: Difficulty, cfg: &EpisodeConfig, rng: &mut Rng, id: &str) -> Result<EpisodeSpec> {
    cfg.validate()?;
    let (lo, hi) = cfg.bracket(tier);
    let (w, h) = (world.width as i32, world.height as i32);
    for _ in 0..cfg.max_retries {
        let landmark = &world.landmarks()[rng.gen_range(0..world.landmarks().len())];
        let sector = Sector::ALL[rng.gen_range(0..Sector::COUNT)];
        let band = Band::ALL[rng.gen_range(0..Band::COUNT)];
        let tag = rng.gen_range(0..cfg.tags);
        let (rlo, rhi) = cfg.band_range(band);
        let r = rng.gen_range(rlo..rhi);
        let a = sector.angle() + rng.gen_range(-PI / 8.0..PI / 8.0);
        let gx = (landmark.x as f64 + r * a.cos()).round() as i32;
        let gy = (landmark.y as f64 + r * a.sin()).round() as i32;
        if !world.in_bounds(gx, gy) || world.height_at(gx, gy) >= world.cruise_alt {
            continue;
        }
        let mut start = None;
        for _ in 0..200 {
            let sx = rng.gen_range(0..w);
            let sy = rng.gen_range(0..h);
            let d = (((sx - gx).pow(2) + (sy - gy).pow(2)) as f64).sqrt();
            if d >= lo && d < hi && world.height_at(sx, sy) < world.cruise_alt {
                start = Some((sx, sy));
                break;
            }
        }
        let Some((sx, sy)) = start else { continue };
        let heading = Heading::ALL[rng.gen_range(0..4)];
        let start = UavState::new(sx, sy, world.cruise_alt, heading);
        let Ok(path) = plan_path(world, &start, (gx, gy)) else { continue };
        let shortest_path_m = path.horizontal_moves() as f64 * world.cell_size;
        let max_steps = (cfg.budget_factor * shortest_path_m / world.cell_size).ceil() as usize;
        if path.actions.len() > max_steps {
            continue;
        }
        return Ok(EpisodeSpec {
            id: id.to_string(),
            world_id: world.id.clone(),
            start,
            goal: (gx, gy),
            descriptor: GoalDescriptor { landmark_id: landmark.id, sector, band, tag },
            difficulty: tier,
            shortest_path_m,
            max_steps,
        });
    }
    Err(Error::Sampling(format!("no feasible {tier} episode in world {} after {} draws", world.id, cfg.max_retries)))
}
