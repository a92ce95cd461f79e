use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::world::{Action, CityWorld, Heading, UavState};

pub const MOVE_COST: f64 = 1.0;
pub const TURN_COST: f64 = 0.1;

/// Expert trajectory. `states[i]` is the pose before `actions[i]`; the last
/// action is always `Stop`.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpertPath {
    pub states: Vec<UavState>,
    pub actions: Vec<Action>,
    /// Remaining translational moves (horizontal plus vertical) before each action.
    pub remaining: Vec<f64>,
    pub cost: f64,
}

impl ExpertPath {
    pub fn horizontal_moves(&self) -> usize {
        self.actions.iter().filter(|a| **a == Action::Forward).count()
    }

    /// Distinct horizontal cells visited, in order, starting with the start cell.
    pub fn cells(&self) -> Vec<(i32, i32)> {
        let mut out: Vec<(i32, i32)> = Vec::new();
        for s in &self.states {
            if out.last() != Some(&(s.x, s.y)) {
                out.push((s.x, s.y));
            }
        }
        out
    }

    pub fn final_state(&self) -> UavState {
        *self.states.last().expect("paths hold at least the start state")
    }
}

#[derive(PartialEq)]
struct Entry {
    f: f64,
    h: f64,
    index: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    // Reversed so the max-heap pops the smallest (f, h, index).
    fn cmp(&self, other: &Self) -> Ordering {
        other.f.total_cmp(&self.f).then(other.h.total_cmp(&self.h)).then(other.index.cmp(&self.index))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

struct Space<'a> {
    world: &'a CityWorld,
    levels: usize,
}

impl Space<'_> {
    fn index(&self, s: &UavState) -> usize {
        let w = self.world;
        ((((s.z - w.z_min) as usize * w.height + s.y as usize) * w.width) + s.x as usize) * 4 + s.heading.index()
    }

    fn state(&self, mut i: usize) -> UavState {
        let w = self.world;
        let heading = Heading::ALL[i % 4];
        i /= 4;
        let x = (i % w.width) as i32;
        i /= w.width;
        let y = (i % w.height) as i32;
        let z = (i / w.height) as i32 + w.z_min;
        UavState { x, y, z, heading }
    }

    fn len(&self) -> usize {
        self.levels * self.world.width * self.world.height * 4
    }
}

/// A* over `(x, y, z, heading)`: unit cost for translations, [`TURN_COST`] per
/// turn, horizontal Euclidean heuristic, ties broken by `(f, h, state index)`.
/// The goal is reached at any altitude once the UAV is over the goal cell.
pub fn plan_path(world: &CityWorld, start: &UavState, goal: (i32, i32)) -> Result<ExpertPath> {
    if !world.is_valid(start) {
        return Err(Error::Contract(format!("invalid start state {start:?}")));
    }
    if !world.in_bounds(goal.0, goal.1) {
        return Err(Error::Infeasible(format!("goal {goal:?} outside the grid")));
    }
    let space = Space { world, levels: (world.z_max - world.z_min + 1) as usize };
    let heuristic = |s: &UavState| (((s.x - goal.0).pow(2) + (s.y - goal.1).pow(2)) as f64).sqrt();
    let n = space.len();
    let mut g = vec![f64::INFINITY; n];
    let mut parent: Vec<(u32, u8)> = vec![(u32::MAX, 0); n];
    let mut closed = vec![false; n];
    let s0 = space.index(start);
    g[s0] = 0.0;
    let mut heap = BinaryHeap::new();
    heap.push(Entry { f: heuristic(start), h: heuristic(start), index: s0 });
    let moves = [(Action::Forward, MOVE_COST), (Action::TurnLeft, TURN_COST), (Action::TurnRight, TURN_COST), (Action::GoUp, MOVE_COST), (Action::GoDown, MOVE_COST)];
    while let Some(Entry { index, .. }) = heap.pop() {
        if closed[index] {
            continue;
        }
        closed[index] = true;
        let s = space.state(index);
        if (s.x, s.y) == goal {
            return Ok(reconstruct(&space, &parent, s0, index, g[index]));
        }
        for (action, cost) in moves {
            let out = world.step(&s, action)?;
            if out.blocked {
                continue;
            }
            let j = space.index(&out.next);
            let cand = g[index] + cost;
            if !closed[j] && cand < g[j] {
                g[j] = cand;
                parent[j] = (index as u32, action.index() as u8);
                let h = heuristic(&out.next);
                heap.push(Entry { f: cand + h, h, index: j });
            }
        }
    }
    Err(Error::Infeasible(format!("no path from {start:?} to {goal:?} in world {}", world.id)))
}

fn reconstruct(space: &Space<'_>, parent: &[(u32, u8)], s0: usize, end: usize, cost: f64) -> ExpertPath {
    let mut actions = vec![Action::Stop];
    let mut states = vec![space.state(end)];
    let mut cur = end;
    while cur != s0 {
        let (p, a) = parent[cur];
        actions.push(Action::ALL[a as usize]);
        cur = p as usize;
        states.push(space.state(cur));
    }
    actions.reverse();
    states.reverse();
    let mut remaining = vec![0.0; actions.len()];
    let mut acc = 0.0;
    for i in (0..actions.len()).rev() {
        if matches!(actions[i], Action::Forward | Action::GoUp | Action::GoDown) {
            acc += 1.0;
        }
        remaining[i] = acc;
    }
    ExpertPath { states, actions, remaining, cost }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WaypointConfig {
    /// Maximum distance between consecutive waypoints, cells.
    pub s_max: f64,
    /// Landmarks whose center lies within this distance of the path get an anchor waypoint.
    pub r_anchor: f64,
    /// Waypoints closer than this to the previous one are merged.
    pub dedupe: f64,
}

impl Default for WaypointConfig {
    fn default() -> Self {
        Self { s_max: 12.0, r_anchor: 3.0, dedupe: 2.0 }
    }
}

fn dist(a: (i32, i32), b: (i32, i32)) -> f64 {
    (((a.0 - b.0).pow(2) + (a.1 - b.1).pow(2)) as f64).sqrt()
}

/// Sparse sub-goals along an expert path: heading-change corners and landmark
/// anchors, merged when closer than `dedupe`, with intermediates inserted so
/// that no gap exceeds `s_max`. The last waypoint is the goal cell.
pub fn extract_waypoints(path: &ExpertPath, world: &CityWorld, cfg: &WaypointConfig) -> Vec<(i32, i32)> {
    let cells = path.cells();
    let last = cells.len() - 1;
    let mut picks: Vec<usize> = Vec::new();
    for j in 1..last {
        let d0 = (cells[j].0 - cells[j - 1].0, cells[j].1 - cells[j - 1].1);
        let d1 = (cells[j + 1].0 - cells[j].0, cells[j + 1].1 - cells[j].1);
        if d0 != d1 {
            picks.push(j);
        }
    }
    for lm in world.landmarks() {
        let (best, d) = cells.iter().enumerate().map(|(j, &c)| (j, dist(c, (lm.x, lm.y)))).fold((0, f64::INFINITY), |b, (j, d)| if d < b.1 { (j, d) } else { b });
        if d <= cfg.r_anchor && best > 0 {
            picks.push(best);
        }
    }
    picks.push(last);
    picks.sort_unstable();
    picks.dedup();
    let mut kept: Vec<usize> = Vec::new();
    for &j in &picks {
        match kept.last() {
            Some(&k) if dist(cells[k], cells[j]) <= cfg.dedupe => {
                if j == last {
                    *kept.last_mut().expect("non-empty") = j;
                }
            }
            _ => kept.push(j),
        }
    }
    let mut out = Vec::with_capacity(kept.len());
    let mut prev = 0usize;
    for j in kept {
        while dist(cells[prev], cells[j]) > cfg.s_max {
            let m = (prev + 1..j).rev().find(|&m| dist(cells[prev], cells[m]) <= cfg.s_max).unwrap_or(prev + 1);
            out.push(cells[m]);
            prev = m;
        }
        out.push(cells[j]);
        prev = j;
    }
    out
}
