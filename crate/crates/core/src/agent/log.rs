//! Per-step trajectory log: a header line, then one CSV row per decision and
//! a closing row with action `end` holding the final pose. Missing values are
//! empty fields.

use std::path::Path;

use crate::error::{Error, Result};
use crate::world::{Action, Heading};

pub const LOG_COLUMNS: [&str; 15] = ["t", "x", "y", "z", "heading", "action", "k", "w_x", "w_y", "g_hat_x", "g_hat_y", "p_hat", "v_hat", "r_t", "d_t"];
/// Label columns appended by demonstration corpora.
pub const LABEL_COLUMNS: [&str; 7] = ["expert_action", "wstar_x", "wstar_y", "p", "v", "g_x", "g_y"];

#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub t: usize,
    pub x: i32,
    pub y: i32,
    pub z: i32,
    pub heading: Heading,
    /// `None` on the closing row.
    pub action: Option<Action>,
    pub k: usize,
    pub waypoint: Option<(f64, f64)>,
    pub goal_hat: Option<(f64, f64)>,
    pub progress_hat: Option<f64>,
    pub value_hat: Option<f64>,
    pub reward: Option<f64>,
    /// Horizontal distance to the goal at this pose, meters.
    pub distance_m: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabelRow {
    pub expert_action: Action,
    pub waypoint: (f64, f64),
    pub progress: f64,
    pub value: f64,
    pub goal: (f64, f64),
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| format!("{v:e}")).unwrap_or_default()
}

fn heading_name(h: Heading) -> &'static str {
    match h {
        Heading::East => "E",
        Heading::North => "N",
        Heading::West => "W",
        Heading::South => "S",
    }
}

fn parse_heading(s: &str) -> Option<Heading> {
    Heading::ALL.into_iter().find(|h| heading_name(*h) == s)
}

impl LogRow {
    fn fields(&self) -> Vec<String> {
        vec![
            self.t.to_string(),
            self.x.to_string(),
            self.y.to_string(),
            self.z.to_string(),
            heading_name(self.heading).to_string(),
            self.action.map_or("end".to_string(), |a| a.name().to_string()),
            self.k.to_string(),
            opt(self.waypoint.map(|w| w.0)),
            opt(self.waypoint.map(|w| w.1)),
            opt(self.goal_hat.map(|w| w.0)),
            opt(self.goal_hat.map(|w| w.1)),
            opt(self.progress_hat),
            opt(self.value_hat),
            opt(self.reward),
            format!("{:e}", self.distance_m),
        ]
    }
}

impl LabelRow {
    fn fields(&self) -> Vec<String> {
        vec![
            self.expert_action.name().to_string(),
            format!("{:e}", self.waypoint.0),
            format!("{:e}", self.waypoint.1),
            format!("{:e}", self.progress),
            format!("{:e}", self.value),
            format!("{:e}", self.goal.0),
            format!("{:e}", self.goal.1),
        ]
    }
}

/// CSV text of a log; `labels`, when given, must have one entry per decision row.
pub fn log_to_bytes(rows: &[LogRow], labels: Option<&[LabelRow]>) -> Result<Vec<u8>, csv::Error> {
    let mut out = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut out);
        let mut header: Vec<&str> = LOG_COLUMNS.to_vec();
        if labels.is_some() {
            header.extend(LABEL_COLUMNS);
        }
        w.write_record(&header)?;
        for (i, row) in rows.iter().enumerate() {
            let mut f = row.fields();
            if let Some(l) = labels {
                match l.get(i) {
                    Some(l) if row.action.is_some() => f.extend(l.fields()),
                    _ => f.extend(std::iter::repeat(String::new()).take(LABEL_COLUMNS.len())),
                }
            }
            w.write_record(&f)?;
        }
        w.flush()?;
    }
    Ok(out)
}

pub fn write_log(path: &Path, rows: &[LogRow], labels: Option<&[LabelRow]>) -> Result<()> {
    let bytes = log_to_bytes(rows, labels).map_err(|e| Error::format("trajectory log", path, e.to_string()))?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads a log written by [`write_log`], returning rows and, when present, labels.
pub fn read_log(path: &Path) -> Result<(Vec<LogRow>, Option<Vec<LabelRow>>)> {
    let bad = |msg: String| Error::format("trajectory log", path, msg);
    let mut r = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let header: Vec<String> = r.headers().map_err(|e| bad(e.to_string()))?.iter().map(str::to_string).collect();
    let with_labels = header.len() == LOG_COLUMNS.len() + LABEL_COLUMNS.len();
    let expected: Vec<&str> = LOG_COLUMNS.iter().chain(if with_labels { LABEL_COLUMNS.iter() } else { [].iter() }).copied().collect();
    if header != expected {
        return Err(bad(format!("unexpected header {header:?}")));
    }
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let at = |i: usize| rec.get(i).unwrap_or("");
        let num = |i: usize| -> Result<f64> { at(i).parse().map_err(|_| bad(format!("row {}: bad number {:?} in {}", line + 1, at(i), expected[i]))) };
        let optf = |i: usize| -> Result<Option<f64>> {
            if at(i).is_empty() {
                Ok(None)
            } else {
                num(i).map(Some)
            }
        };
        let int = |i: usize| -> Result<i64> { at(i).parse().map_err(|_| bad(format!("row {}: bad integer {:?} in {}", line + 1, at(i), expected[i]))) };
        let pair = |i: usize| -> Result<Option<(f64, f64)>> { Ok(optf(i)?.zip(optf(i + 1)?)) };
        let action = match at(5) {
            "end" => None,
            name => Some(Action::from_name(name).ok_or_else(|| bad(format!("row {}: unknown action {name:?}", line + 1)))?),
        };
        rows.push(LogRow {
            t: int(0)? as usize,
            x: int(1)? as i32,
            y: int(2)? as i32,
            z: int(3)? as i32,
            heading: parse_heading(at(4)).ok_or_else(|| bad(format!("row {}: bad heading {:?}", line + 1, at(4))))?,
            action,
            k: int(6)? as usize,
            waypoint: pair(7)?,
            goal_hat: pair(9)?,
            progress_hat: optf(11)?,
            value_hat: optf(12)?,
            reward: optf(13)?,
            distance_m: num(14)?,
        });
        if with_labels && action.is_some() {
            let b = LOG_COLUMNS.len();
            labels.push(LabelRow {
                expert_action: Action::from_name(at(b)).ok_or_else(|| bad(format!("row {}: bad expert action", line + 1)))?,
                waypoint: (num(b + 1)?, num(b + 2)?),
                progress: num(b + 3)?,
                value: num(b + 4)?,
                goal: (num(b + 5)?, num(b + 6)?),
            });
        }
    }
    Ok((rows, with_labels.then_some(labels)))
}
