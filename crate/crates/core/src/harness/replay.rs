//! Step-by-step account of a trajectory log with waypoint events marked.

use std::fmt::Write as _;

use crate::agent::{LabelRow, LogRow};

/// A step where a new sub-goal was issued.
#[derive(Clone, Debug, PartialEq)]
pub struct WaypointEvent {
    pub t: usize,
    pub k: usize,
    pub waypoint: (f64, f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Replay {
    pub events: Vec<WaypointEvent>,
    /// Goal cell, when the log carries it or it was supplied.
    pub goal: Option<(f64, f64)>,
    pub final_distance_m: f64,
    pub steps: usize,
    text: String,
    csv: String,
}

pub const REPLAY_COLUMNS: [&str; 11] = ["t", "x", "y", "z", "heading", "action", "k", "event", "w_x", "w_y", "d_t"];

/// Marks a waypoint event wherever `k` grows. The goal comes from the
/// labels when present, else from `goal`.
pub fn replay(rows: &[LogRow], labels: Option<&[LabelRow]>, goal: Option<(f64, f64)>, cell_size: f64, threshold_m: f64) -> Replay {
    let goal = labels.and_then(|l| l.first()).map(|l| l.goal).or(goal);
    let mut events = Vec::new();
    let mut text = String::new();
    let mut csv = REPLAY_COLUMNS.join(",");
    csv.push('\n');
    let mut k_prev = 0;
    for r in rows {
        let event = r.action.is_some() && r.k > k_prev;
        if event {
            if let Some(w) = r.waypoint {
                events.push(WaypointEvent { t: r.t, k: r.k, waypoint: w });
            }
        }
        let action = r.action.map_or("end", |a| a.name());
        let (wx, wy) = r.waypoint.map_or((String::new(), String::new()), |w| (format!("{:.2}", w.0), format!("{:.2}", w.1)));
        let _ = write!(text, "t={:>3} ({:>3},{:>3},{}) {:?} {:<10} d={:.1}m", r.t, r.x, r.y, r.z, r.heading, action, r.distance_m);
        if event {
            let _ = write!(text, "  << waypoint {} -> ({wx},{wy})", r.k);
        }
        text.push('\n');
        let _ = writeln!(csv, "{},{},{},{},{:?},{action},{},{},{wx},{wy},{:.4}", r.t, r.x, r.y, r.z, r.heading, r.k, if event { "waypoint" } else { "" }, r.distance_m);
        k_prev = k_prev.max(r.k);
    }
    let final_distance_m = rows.last().map_or(f64::NAN, |r| r.distance_m);
    let steps = rows.iter().filter(|r| r.action.is_some()).count();
    let _ = writeln!(text, "steps: {steps}; waypoint events: {}; final distance to goal: {final_distance_m:.2} m", events.len());
    if let (Some(g), Some(last)) = (goal, events.last()) {
        let d = ((last.waypoint.0 - g.0).powi(2) + (last.waypoint.1 - g.1).powi(2)).sqrt() * cell_size;
        let verdict = if d <= threshold_m { "within" } else { "outside" };
        let _ = writeln!(text, "last waypoint ({:.2},{:.2}) is {d:.2} m from goal ({:.2},{:.2}), {verdict} the {threshold_m} m success radius", last.waypoint.0, last.waypoint.1, g.0, g.1);
    }
    Replay { events, goal, final_distance_m, steps, text, csv }
}

impl Replay {
    pub fn to_text(&self) -> &str {
        &self.text
    }

    pub fn to_csv(&self) -> &str {
        &self.csv
    }

    /// Distance in meters from the last waypoint to the goal.
    pub fn last_waypoint_gap_m(&self, cell_size: f64) -> Option<f64> {
        let (g, w) = (self.goal?, self.events.last()?.waypoint);
        Some(((w.0 - g.0).powi(2) + (w.1 - g.1).powi(2)).sqrt() * cell_size)
    }
}
