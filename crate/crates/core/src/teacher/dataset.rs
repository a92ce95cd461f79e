//! Stratified demonstration corpora.
//!
//! On disk a corpus is a directory holding `manifest.txt` (`key = value`
//! lines), `episodes.csv` in the episode format, and `records/<id>.csv`, one
//! trajectory log with label columns per episode.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;

use super::demo::{build_demonstration, DemoConfig, Demonstration};
use crate::agent::{log_to_bytes, write_log};
use crate::error::{Error, Result};
use crate::rng::substream;
use crate::world::{read_episodes, sample_episode, write_episodes, CityWorld, Difficulty, EpisodeConfig, EpisodeSpec};

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetConfig {
    pub episodes: usize,
    pub tiers: Vec<Difficulty>,
    pub episode: EpisodeConfig,
    pub demo: DemoConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusManifest {
    pub seed: u64,
    pub world_ids: Vec<String>,
    pub tier_counts: Vec<(Difficulty, usize)>,
    /// Draws that failed and were replaced.
    pub resampled: usize,
    /// Episode ids in corpus order.
    pub order: Vec<String>,
}

impl CorpusManifest {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "seed = {}", self.seed);
        let _ = writeln!(out, "worlds = {}", self.world_ids.join(","));
        for (tier, n) in &self.tier_counts {
            let _ = writeln!(out, "tier.{tier} = {n}");
        }
        let _ = writeln!(out, "resampled = {}", self.resampled);
        let _ = writeln!(out, "episodes = {}", self.order.len());
        let _ = writeln!(out, "order = {}", self.order.join(","));
        out
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let bad = |m: String| Error::format("corpus manifest", path, m);
        let kv: BTreeMap<&str, &str> = text.lines().filter_map(|l| l.split_once(" = ")).collect();
        let get = |k: &str| kv.get(k).copied().ok_or_else(|| bad(format!("missing key {k}")));
        let list = |s: &str| -> Vec<String> { s.split(',').filter(|x| !x.is_empty()).map(str::to_string).collect() };
        let mut tier_counts = Vec::new();
        for tier in Difficulty::ALL {
            if let Some(v) = kv.get(format!("tier.{tier}").as_str()) {
                tier_counts.push((tier, v.parse().map_err(|_| bad(format!("bad count for {tier}")))?));
            }
        }
        Ok(Self {
            seed: get("seed")?.parse().map_err(|_| bad("bad seed".into()))?,
            world_ids: list(get("worlds")?),
            tier_counts,
            resampled: get("resampled")?.parse().map_err(|_| bad("bad resampled count".into()))?,
            order: list(get("order")?),
        })
    }
}

#[derive(Clone, Debug)]
pub struct Corpus {
    pub demos: Vec<Demonstration>,
    pub manifest: CorpusManifest,
}

/// Builds `cfg.episodes` demonstrations split evenly over the tiers (earlier
/// tiers take the remainder) and round-robin over the worlds, then shuffles.
pub fn build_dataset(worlds: &[CityWorld], cfg: &DatasetConfig, seed: u64) -> Result<Corpus> {
    if worlds.is_empty() || cfg.tiers.is_empty() {
        return Err(Error::Config("a corpus needs at least one world and one tier".into()));
    }
    let per = cfg.episodes / cfg.tiers.len();
    let extra = cfg.episodes % cfg.tiers.len();
    let mut demos = Vec::with_capacity(cfg.episodes);
    let mut tier_counts = Vec::new();
    let mut resampled = 0;
    let mut slot = 0u64;
    for (ti, &tier) in cfg.tiers.iter().enumerate() {
        let count = per + usize::from(ti < extra);
        tier_counts.push((tier, count));
        for j in 0..count {
            let world = &worlds[(slot as usize) % worlds.len()];
            let id = format!("{}-{}-{j:04}", world.id, tier);
            let mut attempt = 0u64;
            let demo = loop {
                let mut rng = substream(seed, "corpus-episode", (slot << 16) | attempt);
                let drawn = sample_episode(world, tier, &cfg.episode, &mut rng, &id).and_then(|e| build_demonstration(world, &e, &cfg.demo));
                match drawn {
                    Ok(d) => break d,
                    Err(Error::Sampling(_) | Error::Infeasible(_)) if attempt < 100 => {
                        attempt += 1;
                        resampled += 1;
                    }
                    Err(e) => return Err(e),
                }
            };
            demos.push(demo);
            slot += 1;
        }
    }
    demos.shuffle(&mut substream(seed, "corpus-shuffle", 0));
    let manifest = CorpusManifest { seed, world_ids: worlds.iter().map(|w| w.id.clone()).collect(), tier_counts, resampled, order: demos.iter().map(|d| d.episode.id.clone()).collect() };
    Ok(Corpus { demos, manifest })
}

fn world_of<'a>(worlds: &'a [CityWorld], id: &str) -> Result<&'a CityWorld> {
    worlds.iter().find(|w| w.id == id).ok_or_else(|| Error::MissingPrerequisite(format!("world {id} is not loaded (run gen-worlds)")))
}

/// Writes the corpus files and returns their paths.
pub fn save_corpus(dir: &Path, corpus: &Corpus, worlds: &[CityWorld]) -> Result<Vec<PathBuf>> {
    let records = dir.join("records");
    std::fs::create_dir_all(&records).map_err(|e| Error::io(&records, e))?;
    let mut files = Vec::new();
    let manifest = dir.join("manifest.txt");
    std::fs::write(&manifest, corpus.manifest.to_text()).map_err(|e| Error::io(&manifest, e))?;
    files.push(manifest);
    let episodes = dir.join("episodes.csv");
    let specs: Vec<EpisodeSpec> = corpus.demos.iter().map(|d| d.episode.clone()).collect();
    write_episodes(&episodes, &specs)?;
    files.push(episodes);
    for d in &corpus.demos {
        let world = world_of(worlds, &d.episode.world_id)?;
        let (rows, labels) = d.log(world);
        let p = records.join(format!("{}.csv", d.episode.id));
        write_log(&p, &rows, Some(&labels))?;
        files.push(p);
    }
    Ok(files)
}

/// Rebuilds the demonstrations of a saved corpus and checks every record file
/// against the rebuilt labels byte for byte.
pub fn load_corpus(dir: &Path, worlds: &[CityWorld], demo: &DemoConfig) -> Result<Corpus> {
    let mpath = dir.join("manifest.txt");
    if !mpath.exists() {
        return Err(Error::MissingPrerequisite(format!("no corpus at {} (run build-corpus)", dir.display())));
    }
    let text = std::fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest = CorpusManifest::parse(&text, &mpath)?;
    let specs = read_episodes(&dir.join("episodes.csv"))?;
    let mut demos = Vec::with_capacity(specs.len());
    for e in &specs {
        let world = world_of(worlds, &e.world_id)?;
        let d = build_demonstration(world, e, demo)?;
        let (rows, labels) = d.log(world);
        let rec = dir.join("records").join(format!("{}.csv", e.id));
        let stored = std::fs::read(&rec).map_err(|err| Error::io(&rec, err))?;
        let fresh = log_to_bytes(&rows, Some(&labels)).map_err(|err| Error::format("trajectory log", &rec, err.to_string()))?;
        if fresh != stored {
            return Err(Error::Consistency(format!("record {} does not match its rebuilt demonstration", rec.display())));
        }
        demos.push(d);
    }
    if demos.iter().map(|d| &d.episode.id).ne(manifest.order.iter()) {
        return Err(Error::Consistency("corpus episode order differs from the manifest".into()));
    }
    Ok(Corpus { demos, manifest })
}
