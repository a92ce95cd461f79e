//! Synthetic city: obstacle heights, landmarks, UAV kinematics, top-down
//! observations and a tiered episode generator.

mod episode;
mod generate;
mod io;
mod observe;

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;

pub use episode::{sample_episode, Band, Difficulty, EpisodeConfig, EpisodeSpec, GoalDescriptor, Sector};
pub use generate::{connected_at_altitude, generate_world, WorldConfig};
pub use io::{read_episodes, read_world, write_episodes, write_world, EPISODE_COLUMNS, WORLD_MAGIC};
pub use observe::{render_observation, Observation, OBS_CHANNELS};

use crate::error::{Error, Result};

/// Compass heading; `East` is angle 0 and angles grow counter-clockwise (+y is north).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Heading {
    East,
    North,
    West,
    South,
}

impl Heading {
    pub const ALL: [Heading; 4] = [Heading::East, Heading::North, Heading::West, Heading::South];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn angle(self) -> f64 {
        self.index() as f64 * FRAC_PI_2
    }

    pub fn delta(self) -> (i32, i32) {
        match self {
            Heading::East => (1, 0),
            Heading::North => (0, 1),
            Heading::West => (-1, 0),
            Heading::South => (0, -1),
        }
    }

    pub fn left(self) -> Self {
        Self::ALL[(self.index() + 1) % 4]
    }

    pub fn right(self) -> Self {
        Self::ALL[(self.index() + 3) % 4]
    }

    pub fn from_delta(dx: i32, dy: i32) -> Option<Self> {
        Self::ALL.into_iter().find(|h| h.delta() == (dx, dy))
    }
}

/// The six discrete UAV actions, in logit order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Action {
    GoUp,
    GoDown,
    Forward,
    TurnLeft,
    TurnRight,
    Stop,
}

pub const NUM_ACTIONS: usize = 6;

impl Action {
    pub const ALL: [Action; NUM_ACTIONS] = [Action::GoUp, Action::GoDown, Action::Forward, Action::TurnLeft, Action::TurnRight, Action::Stop];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Action::GoUp => "go_up",
            Action::GoDown => "go_down",
            Action::Forward => "forward",
            Action::TurnLeft => "turn_left",
            Action::TurnRight => "turn_right",
            Action::Stop => "stop",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.name() == s)
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// UAV pose. Every action moves by whole cells, so positions stay on cell centers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct UavState {
    pub x: i32,
    pub y: i32,
    pub z: i32,
    pub heading: Heading,
}

impl UavState {
    pub fn new(x: i32, y: i32, z: i32, heading: Heading) -> Self {
        Self { x, y, z, heading }
    }

    pub fn pos(&self) -> (f64, f64) {
        (self.x as f64, self.y as f64)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Landmark {
    pub id: usize,
    pub token: String,
    pub x: i32,
    pub y: i32,
    pub radius: i32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CityWorld {
    pub id: String,
    pub width: usize,
    pub height: usize,
    pub cell_size: f64,
    pub z_min: i32,
    pub z_max: i32,
    pub cruise_alt: i32,
    /// Visible radius in cells is `r_base + r_gain * z`.
    pub r_base: i32,
    pub r_gain: i32,
    heights: Vec<i32>,
    landmarks: Vec<Landmark>,
    landmark_mask: Vec<bool>,
}

impl CityWorld {
    #[allow(clippy::too_many_arguments)]
    pub fn new(id: String, width: usize, height: usize, cell_size: f64, altitude: (i32, i32), cruise_alt: i32, visibility: (i32, i32), heights: Vec<i32>, landmarks: Vec<Landmark>) -> Result<Self> {
        let (z_min, z_max) = altitude;
        if width == 0 || height == 0 || heights.len() != width * height {
            return Err(Error::Contract(format!("height field has {} cells for a {width}x{height} grid", heights.len())));
        }
        if !(cell_size > 0.0) || z_min < 0 || z_min > cruise_alt || cruise_alt > z_max {
            return Err(Error::Contract(format!("bad geometry: cell {cell_size}, altitude [{z_min},{z_max}], cruise {cruise_alt}")));
        }
        if visibility.0 < 0 || visibility.1 < 0 {
            return Err(Error::Contract("visibility parameters must be non-negative".into()));
        }
        if let Some(h) = heights.iter().find(|&&h| h < 0 || h > z_max) {
            return Err(Error::Contract(format!("height {h} outside [0, {z_max}]")));
        }
        if landmarks.len() < 2 {
            return Err(Error::Contract("a world needs at least 2 landmarks".into()));
        }
        let mut w = Self { id, width, height, cell_size, z_min, z_max, cruise_alt, r_base: visibility.0, r_gain: visibility.1, heights, landmarks: Vec::new(), landmark_mask: Vec::new() };
        for (i, lm) in landmarks.iter().enumerate() {
            if lm.id != i {
                return Err(Error::Contract(format!("landmark ids must be 0..n in order, found {} at {i}", lm.id)));
            }
            if !w.in_bounds(lm.x, lm.y) || w.height_at(lm.x, lm.y) != 0 || lm.radius < 0 {
                return Err(Error::Contract(format!("landmark {} must sit on free ground inside the grid", lm.id)));
            }
        }
        let mut mask = vec![false; width * height];
        for lm in &landmarks {
            for y in (lm.y - lm.radius).max(0)..=(lm.y + lm.radius).min(height as i32 - 1) {
                for x in (lm.x - lm.radius).max(0)..=(lm.x + lm.radius).min(width as i32 - 1) {
                    if (x - lm.x).pow(2) + (y - lm.y).pow(2) <= lm.radius.pow(2) {
                        mask[y as usize * width + x as usize] = true;
                    }
                }
            }
        }
        w.landmarks = landmarks;
        w.landmark_mask = mask;
        Ok(w)
    }

    pub fn in_bounds(&self, x: i32, y: i32) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height
    }

    pub fn cell_index(&self, x: i32, y: i32) -> usize {
        y as usize * self.width + x as usize
    }

    /// Obstacle height at an in-bounds cell.
    pub fn height_at(&self, x: i32, y: i32) -> i32 {
        self.heights[self.cell_index(x, y)]
    }

    pub fn heights(&self) -> &[i32] {
        &self.heights
    }

    pub fn landmarks(&self) -> &[Landmark] {
        &self.landmarks
    }

    pub fn landmark(&self, id: usize) -> Option<&Landmark> {
        self.landmarks.get(id)
    }

    /// True when the cell lies inside some landmark footprint.
    pub fn is_landmark_cell(&self, x: i32, y: i32) -> bool {
        self.landmark_mask[self.cell_index(x, y)]
    }

    pub fn visible_radius(&self, z: i32) -> i32 {
        self.r_base + self.r_gain * z
    }

    /// Observation patch side, large enough for the radius at `z_max`.
    pub fn patch_size(&self) -> usize {
        2 * self.visible_radius(self.z_max) as usize + 1
    }

    pub fn is_valid(&self, s: &UavState) -> bool {
        self.in_bounds(s.x, s.y) && s.z >= self.z_min && s.z <= self.z_max && s.z > self.height_at(s.x, s.y)
    }

    /// Hex SHA-256 of the serialized world.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        crate::numerics::hex(&Sha256::digest(io::world_to_text(self).as_bytes()))
    }

    /// Applies one action. Pure: the result depends only on the arguments.
    pub fn step(&self, s: &UavState, action: Action) -> Result<StepOutcome> {
        if !self.is_valid(s) {
            return Err(Error::Contract(format!("invalid UAV state {s:?} in world {}", self.id)));
        }
        let blocked = |state| StepOutcome { next: state, blocked: true, terminal: false };
        let moved = |state| StepOutcome { next: state, blocked: false, terminal: false };
        Ok(match action {
            Action::Forward => {
                let (dx, dy) = s.heading.delta();
                let (nx, ny) = (s.x + dx, s.y + dy);
                if self.in_bounds(nx, ny) && self.height_at(nx, ny) < s.z {
                    moved(UavState { x: nx, y: ny, ..*s })
                } else {
                    blocked(*s)
                }
            }
            Action::TurnLeft => moved(UavState { heading: s.heading.left(), ..*s }),
            Action::TurnRight => moved(UavState { heading: s.heading.right(), ..*s }),
            Action::GoUp => {
                if s.z + 1 > self.z_max {
                    blocked(*s)
                } else {
                    moved(UavState { z: s.z + 1, ..*s })
                }
            }
            Action::GoDown => {
                if s.z - 1 < self.z_min || s.z - 1 <= self.height_at(s.x, s.y) {
                    blocked(*s)
                } else {
                    moved(UavState { z: s.z - 1, ..*s })
                }
            }
            Action::Stop => StepOutcome { next: *s, blocked: false, terminal: true },
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub next: UavState,
    pub blocked: bool,
    pub terminal: bool,
}

/// Horizontal Euclidean distance in meters between cell coordinates.
pub fn distance_m(p: (f64, f64), g: (f64, f64), cell_size: f64) -> f64 {
    ((p.0 - g.0).powi(2) + (p.1 - g.1).powi(2)).sqrt() * cell_size
}

/// Distance from the UAV to a ground goal; altitude is ignored.
pub fn distance_to_goal(state: &UavState, goal: (i32, i32), cell_size: f64) -> f64 {
    distance_m(state.pos(), (goal.0 as f64, goal.1 as f64), cell_size)
}

/// Angle in `[0, 2pi)`.
pub fn normalize_angle(a: f64) -> f64 {
    a.rem_euclid(2.0 * PI)
}
