use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::metrics::{aggregate, episode_metrics, EpisodeResult, MetricCell, SUCCESS_THRESHOLD_M};
use crate::agent::{run_episode, EpisodeOptions, LogRow, Navigator};
use crate::error::{Error, Result};
use crate::mapper::PriorConfig;
use crate::parallel::ordered_map;
use crate::rng::substream;
use crate::world::{sample_episode, CityWorld, Difficulty, EpisodeConfig, EpisodeSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Seen,
    Unseen,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Seen => "seen",
            Split::Unseen => "unseen",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkConfig {
    pub episodes_per_tier: usize,
    pub tiers: Vec<Difficulty>,
    pub episode: EpisodeConfig,
    pub prior: PriorConfig,
    pub threshold_m: f64,
    pub workers: usize,
    /// Keep per-step log rows of every episode.
    pub keep_logs: bool,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            episodes_per_tier: 20,
            tiers: Difficulty::ALL.to_vec(),
            episode: EpisodeConfig::default(),
            prior: PriorConfig::default(),
            threshold_m: SUCCESS_THRESHOLD_M,
            workers: 1,
            keep_logs: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeRecord {
    pub split: Split,
    pub seed: u64,
    pub world_id: String,
    pub result: EpisodeResult,
    pub log: Vec<LogRow>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub split: Split,
    /// `None` is the all-tier row.
    pub tier: Option<Difficulty>,
    pub cell: MetricCell,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkReport {
    pub rows: Vec<ReportRow>,
    pub seeds: Vec<u64>,
    pub config: BTreeMap<String, String>,
    pub episodes: Vec<EpisodeRecord>,
}

pub const REPORT_COLUMNS: [&str; 8] = ["split", "tier", "NE", "SR", "OSR", "SPL", "n", "seeds"];
pub const EPISODE_RESULT_COLUMNS: [&str; 13] = ["split", "seed", "tier", "episode_id", "world_id", "final_x", "final_y", "ne_m", "success", "oracle", "path_m", "shortest_m", "steps"];

fn tier_name(t: Option<Difficulty>) -> &'static str {
    t.map_or("all", Difficulty::name)
}

impl BenchmarkReport {
    pub fn cell(&self, split: Split, tier: Option<Difficulty>) -> Option<&MetricCell> {
        self.rows.iter().find(|r| r.split == split && r.tier == tier).map(|r| &r.cell)
    }

    fn seed_list(&self) -> String {
        self.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(";")
    }

    pub fn to_csv(&self) -> String {
        let mut out = REPORT_COLUMNS.join(",");
        out.push('\n');
        let seeds = self.seed_list();
        for r in &self.rows {
            let c = &r.cell;
            let _ = writeln!(out, "{},{},{:.4},{:.4},{:.4},{:.4},{},{}", r.split.name(), tier_name(r.tier), c.ne, c.sr, c.osr, c.spl, c.n, seeds);
        }
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<8} {:<7} {:>9} {:>7} {:>7} {:>7} {:>5}", "split", "tier", "NE(m)", "SR", "OSR", "SPL", "n");
        for r in &self.rows {
            let c = &r.cell;
            let _ = writeln!(out, "{:<8} {:<7} {:>9.2} {:>7.2} {:>7.2} {:>7.2} {:>5}", r.split.name(), tier_name(r.tier), c.ne, c.sr, c.osr, c.spl, c.n);
        }
        let _ = writeln!(out, "seeds: {}", self.seed_list());
        for (k, v) in &self.config {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn episodes_csv(&self) -> String {
        let mut out = EPISODE_RESULT_COLUMNS.join(",");
        out.push('\n');
        for e in &self.episodes {
            let r = &e.result;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{:.6},{},{},{:.6},{:.6},{}",
                e.split.name(),
                e.seed,
                r.tier.name(),
                r.episode_id,
                e.world_id,
                r.final_position.0,
                r.final_position.1,
                r.ne_m,
                u8::from(r.success),
                u8::from(r.oracle),
                r.path_m,
                r.shortest_m,
                r.steps
            );
        }
        out
    }

    /// Writes `report.csv`, `report.txt`, `episodes.csv` and, when logs were kept, `trajectories/<id>.csv`.
    pub fn save(&self, dir: &Path) -> Result<Vec<std::path::PathBuf>> {
        let write = |name: &str, text: &str| -> Result<std::path::PathBuf> {
            let p = dir.join(name);
            std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
            Ok(p)
        };
        let mut files = vec![write("report.csv", &self.to_csv())?, write("report.txt", &self.to_table())?, write("episodes.csv", &self.episodes_csv())?];
        if self.episodes.iter().any(|e| !e.log.is_empty()) {
            let tdir = dir.join("trajectories");
            std::fs::create_dir_all(&tdir).map_err(|e| Error::io(&tdir, e))?;
            for e in self.episodes.iter().filter(|e| !e.log.is_empty()) {
                let p = tdir.join(format!("{}.csv", e.result.episode_id));
                crate::agent::write_log(&p, &e.log, None)?;
                files.push(p);
            }
        }
        Ok(files)
    }
}

struct Task<'a> {
    split: Split,
    seed: u64,
    index: u64,
    world: &'a CityWorld,
    episode: EpisodeSpec,
}

/// Stratified benchmark episodes of one split for one seed.
pub fn benchmark_episodes(worlds: &[CityWorld], split: Split, cfg: &BenchmarkConfig, seed: u64) -> Result<Vec<(usize, EpisodeSpec)>> {
    if worlds.is_empty() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for (ti, &tier) in cfg.tiers.iter().enumerate() {
        for j in 0..cfg.episodes_per_tier {
            let wi = j % worlds.len();
            let id = format!("{}-s{seed}-{}-{j:03}", split.name(), tier.name());
            let slot = ((split as u64) << 40) | ((ti as u64) << 32) | j as u64;
            let mut last = None;
            for attempt in 0..100u64 {
                let mut rng = substream(seed, "bench-episode", (slot << 8) | attempt);
                match sample_episode(&worlds[wi], tier, &cfg.episode, &mut rng, &id) {
                    Ok(e) => {
                        last = Some(Ok(e));
                        break;
                    }
                    Err(e @ (Error::Sampling(_) | Error::Infeasible(_))) => last = Some(Err(e)),
                    Err(e) => return Err(e),
                }
            }
            out.push((wi, last.expect("at least one attempt")?));
        }
    }
    Ok(out)
}

/// Greedy evaluation over seen and unseen worlds; episodes run on `cfg.workers`
/// threads and are reduced in episode-index order.
pub fn run_benchmark<'m>(make_agent: &(dyn Fn() -> Box<dyn Navigator + 'm> + Sync), seen: &[CityWorld], unseen: &[CityWorld], cfg: &BenchmarkConfig, seeds: &[u64]) -> Result<BenchmarkReport> {
    let mut tasks = Vec::new();
    for &seed in seeds {
        for (split, worlds) in [(Split::Seen, seen), (Split::Unseen, unseen)] {
            for (wi, episode) in benchmark_episodes(worlds, split, cfg, seed)? {
                tasks.push(Task { split, seed, index: tasks.len() as u64, world: &worlds[wi], episode });
            }
        }
    }
    let opts = EpisodeOptions { prior: cfg.prior, reward: None, keep_maps: false };
    let run = |t: &Task<'_>| -> Result<EpisodeRecord> {
        let mut agent = make_agent();
        let mut rng = substream(t.seed, "bench-agent", t.index);
        let traj = run_episode(agent.as_mut(), t.world, &t.episode, &opts, &mut rng)?;
        let result = episode_metrics(&traj, &t.episode, t.world.cell_size, cfg.threshold_m)?;
        let log = if cfg.keep_logs { traj.log_rows(t.episode.goal, t.world.cell_size) } else { Vec::new() };
        Ok(EpisodeRecord { split: t.split, seed: t.seed, world_id: t.world.id.clone(), result, log })
    };
    let records: Vec<EpisodeRecord> = ordered_map(&tasks, cfg.workers, |_, t| run(t)).into_iter().collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for split in [Split::Seen, Split::Unseen] {
        let in_split: Vec<&EpisodeRecord> = records.iter().filter(|r| r.split == split).collect();
        if in_split.is_empty() {
            continue;
        }
        for &tier in &cfg.tiers {
            let cell = aggregate(in_split.iter().filter(|r| r.result.tier == tier).map(|r| &r.result))?;
            rows.push(ReportRow { split, tier: Some(tier), cell });
        }
        rows.push(ReportRow { split, tier: None, cell: aggregate(in_split.iter().map(|r| &r.result))? });
    }
    let mut config = BTreeMap::new();
    config.insert("eval.episodes_per_tier".into(), cfg.episodes_per_tier.to_string());
    config.insert("eval.threshold_m".into(), cfg.threshold_m.to_string());
    config.insert("eval.tiers".into(), cfg.tiers.iter().map(|t| t.name()).collect::<Vec<_>>().join(";"));
    Ok(BenchmarkReport { rows, seeds: seeds.to_vec(), config, episodes: records })
}
