//! World and episode files.
//!
//! World file:
//! ```text
//! htnav-world v1
//! id <id>
//! dims <W> <H>
//! cell_size <meters>
//! altitude <z_min> <z_max>
//! cruise <z>
//! visibility <r_base> <r_gain>
//! heights
//! <H rows of W integers, row y = 0 first>
//! landmarks <n>
//! <id> <token> <x> <y> <radius>
//! end
//! ```
//! Episode files are CSV with the [`EPISODE_COLUMNS`] header.

use std::fmt::Write as _;
use std::path::Path;

use super::{CityWorld, EpisodeSpec, GoalDescriptor, Heading, Landmark, UavState};
use crate::error::{Error, Result};

pub const WORLD_MAGIC: &str = "htnav-world v1";

pub const EPISODE_COLUMNS: [&str; 15] =
    ["id", "world_id", "start_x", "start_y", "start_z", "start_heading", "goal_x", "goal_y", "landmark_id", "sector", "band", "tag", "difficulty", "shortest_path_m", "max_steps"];

pub(crate) fn world_to_text(w: &CityWorld) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{WORLD_MAGIC}");
    let _ = writeln!(out, "id {}", w.id);
    let _ = writeln!(out, "dims {} {}", w.width, w.height);
    let _ = writeln!(out, "cell_size {}", w.cell_size);
    let _ = writeln!(out, "altitude {} {}", w.z_min, w.z_max);
    let _ = writeln!(out, "cruise {}", w.cruise_alt);
    let _ = writeln!(out, "visibility {} {}", w.r_base, w.r_gain);
    out.push_str("heights\n");
    for row in w.heights().chunks(w.width) {
        let line: Vec<String> = row.iter().map(|h| h.to_string()).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    let _ = writeln!(out, "landmarks {}", w.landmarks().len());
    for l in w.landmarks() {
        let _ = writeln!(out, "{} {} {} {} {}", l.id, l.token, l.x, l.y, l.radius);
    }
    out.push_str("end\n");
    out
}

pub(crate) fn world_from_text(text: &str, path: &Path) -> Result<CityWorld> {
    let bad = |m: String| Error::format("world file", path, m);
    let mut lines = text.lines();
    let mut next = |what: &str| lines.next().ok_or_else(|| bad(format!("unexpected end while reading {what}")));
    if next("header")? != WORLD_MAGIC {
        return Err(bad("missing world header".into()));
    }
    fn fields<'a>(line: &'a str, key: &str, n: usize) -> std::result::Result<Vec<&'a str>, String> {
        let mut it = line.split_whitespace();
        if it.next() != Some(key) {
            return Err(format!("expected '{key}', got {line:?}"));
        }
        let v: Vec<&str> = it.collect();
        if v.len() != n {
            return Err(format!("'{key}' expects {n} values, got {line:?}"));
        }
        Ok(v)
    }
    fn parse<T: std::str::FromStr>(s: &str) -> std::result::Result<T, String> {
        s.parse().map_err(|_| format!("bad number {s:?}"))
    }
    let id = fields(next("id")?, "id", 1).map_err(bad)?[0].to_string();
    let dims = fields(next("dims")?, "dims", 2).map_err(bad)?;
    let (width, height): (usize, usize) = (parse(dims[0]).map_err(bad)?, parse(dims[1]).map_err(bad)?);
    let cell_size: f64 = parse(fields(next("cell_size")?, "cell_size", 1).map_err(bad)?[0]).map_err(bad)?;
    let alt = fields(next("altitude")?, "altitude", 2).map_err(bad)?;
    let altitude = (parse(alt[0]).map_err(bad)?, parse(alt[1]).map_err(bad)?);
    let cruise: i32 = parse(fields(next("cruise")?, "cruise", 1).map_err(bad)?[0]).map_err(bad)?;
    let vis = fields(next("visibility")?, "visibility", 2).map_err(bad)?;
    let visibility = (parse(vis[0]).map_err(bad)?, parse(vis[1]).map_err(bad)?);
    fields(next("heights")?, "heights", 0).map_err(bad)?;
    let mut heights = Vec::with_capacity(width * height);
    for _ in 0..height {
        let row: Vec<i32> = next("height row")?.split_whitespace().map(parse).collect::<std::result::Result<_, _>>().map_err(bad)?;
        if row.len() != width {
            return Err(bad(format!("height row has {} values, expected {width}", row.len())));
        }
        heights.extend(row);
    }
    let n: usize = parse(fields(next("landmarks")?, "landmarks", 1).map_err(bad)?[0]).map_err(bad)?;
    let mut landmarks = Vec::with_capacity(n);
    for _ in 0..n {
        let line = next("landmark")?;
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 5 {
            return Err(bad(format!("bad landmark line {line:?}")));
        }
        landmarks.push(Landmark { id: parse(f[0]).map_err(bad)?, token: f[1].to_string(), x: parse(f[2]).map_err(bad)?, y: parse(f[3]).map_err(bad)?, radius: parse(f[4]).map_err(bad)? });
    }
    if next("end")? != "end" {
        return Err(bad("missing end marker".into()));
    }
    CityWorld::new(id, width, height, cell_size, altitude, cruise, visibility, heights, landmarks)
}

pub fn write_world(path: &Path, world: &CityWorld) -> Result<()> {
    std::fs::write(path, world_to_text(world)).map_err(|e| Error::io(path, e))
}

pub fn read_world(path: &Path) -> Result<CityWorld> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    world_from_text(&text, path)
}

fn episode_record(e: &EpisodeSpec) -> [String; 15] {
    [
        e.id.clone(),
        e.world_id.clone(),
        e.start.x.to_string(),
        e.start.y.to_string(),
        e.start.z.to_string(),
        e.start.heading.index().to_string(),
        e.goal.0.to_string(),
        e.goal.1.to_string(),
        e.descriptor.landmark_id.to_string(),
        e.descriptor.sector.to_string(),
        e.descriptor.band.to_string(),
        e.descriptor.tag.to_string(),
        e.difficulty.to_string(),
        e.shortest_path_m.to_string(),
        e.max_steps.to_string(),
    ]
}

pub fn write_episodes(path: &Path, episodes: &[EpisodeSpec]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format("episode file", path, e.to_string()))?;
    let werr = |e: csv::Error| Error::format("episode file", path, e.to_string());
    w.write_record(EPISODE_COLUMNS).map_err(werr)?;
    for e in episodes {
        w.write_record(episode_record(e)).map_err(werr)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_episodes(path: &Path) -> Result<Vec<EpisodeSpec>> {
    let bad = |m: String| Error::format("episode file", path, m);
    let mut r = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let header = r.headers().map_err(|e| bad(e.to_string()))?.clone();
    if header.iter().ne(EPISODE_COLUMNS) {
        return Err(bad(format!("unexpected header {:?}", header.iter().collect::<Vec<_>>())));
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let f = |i: usize| rec.get(i).unwrap_or_default();
        fn p<T: std::str::FromStr>(s: &str, col: &str) -> std::result::Result<T, String> {
            s.parse().map_err(|_| format!("bad {col} value {s:?}"))
        }
        let parsed = (|| -> std::result::Result<EpisodeSpec, String> {
            let heading = Heading::from_index(p(f(5), "start_heading")?).ok_or("start_heading out of range")?;
            Ok(EpisodeSpec {
                id: f(0).to_string(),
                world_id: f(1).to_string(),
                start: UavState::new(p(f(2), "start_x")?, p(f(3), "start_y")?, p(f(4), "start_z")?, heading),
                goal: (p(f(6), "goal_x")?, p(f(7), "goal_y")?),
                descriptor: GoalDescriptor { landmark_id: p(f(8), "landmark_id")?, sector: f(9).parse()?, band: f(10).parse()?, tag: p(f(11), "tag")? },
                difficulty: f(12).parse()?,
                shortest_path_m: p(f(13), "shortest_path_m")?,
                max_steps: p(f(14), "max_steps")?,
            })
        })();
        out.push(parsed.map_err(bad)?);
    }
    Ok(out)
}
