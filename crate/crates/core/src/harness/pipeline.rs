//! The seven commands and the library entry points they are built from.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::config::ExperimentConfig;
use super::manifest::{relative_files, unix_now, RunManifest, CODE_VERSION, CONFIG_FILE, MANIFEST_FILE};
use super::replay::replay;
use crate::agent::{read_log, DecodeMode, ModelAgent, Navigator, Policy, RandomAgent, TeacherAgent};
use crate::error::{Error, Result};
use crate::evaluation::{ablation_suite, benchmark_episodes, run_benchmark, AblationReport, BenchmarkConfig, BenchmarkReport, Split, VariantKind, VariantModels};
use crate::numerics::Checkpoint;
use crate::rng::substream_seed;
use crate::teacher::{build_dataset, load_corpus, save_corpus, Corpus, Demonstration};
use crate::training::{stage2_curve_csv, train_stage1, train_stage2, EpochLosses, Stage1Result, Stage2Data, Stage2Result};
use crate::world::{generate_world, read_world, write_world, CityWorld, Difficulty, EpisodeSpec};

#[derive(Clone, Debug, PartialEq)]
pub enum Command {
    GenWorlds,
    BuildCorpus,
    TrainIl,
    TrainRl,
    Eval,
    Sweep,
    /// Re-renders a trajectory log; `goal` is used when the log has no labels.
    Replay {
        log: PathBuf,
        goal: Option<(f64, f64)>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenWorlds => "gen-worlds",
            Command::BuildCorpus => "build-corpus",
            Command::TrainIl => "train-il",
            Command::TrainRl => "train-rl",
            Command::Eval => "eval",
            Command::Sweep => "sweep",
            Command::Replay { .. } => "replay",
        }
    }

    /// Run directory under the output root.
    pub fn dir(&self, out: &Path) -> PathBuf {
        match self {
            Command::GenWorlds => out.join("worlds"),
            Command::BuildCorpus => out.join("corpus"),
            Command::TrainIl => out.join("il"),
            Command::TrainRl => out.join("rl"),
            Command::Eval => out.join("eval"),
            Command::Sweep => out.join("sweep"),
            Command::Replay { log, .. } => out.join("replay").join(log.file_stem().map_or("log".into(), |s| s.to_string_lossy().into_owned())),
        }
    }
}

const WORLD_INDEX: &str = "index.txt";
pub const POLICY_FILE: &str = "policy.ckpt";

fn prerequisite(command: &str, producer: &Command, out: &Path) -> Result<PathBuf> {
    let dir = producer.dir(out);
    if dir.join(MANIFEST_FILE).exists() {
        Ok(dir)
    } else {
        Err(Error::MissingPrerequisite(format!("{command} requires {} output in {}; run `htnav {}` first", producer.name(), dir.display(), producer.name())))
    }
}

fn prepare_dir(dir: &Path, force: bool) -> Result<()> {
    let occupied = dir.read_dir().map(|mut d| d.next().is_some()).unwrap_or(false);
    if occupied {
        if !force {
            return Err(Error::Config(format!("{} already holds artifacts; pass --force to overwrite", dir.display())));
        }
        std::fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: PathBuf, text: &str, files: &mut Vec<PathBuf>) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    files.push(path);
    Ok(())
}

/// Seen and unseen worlds of the configuration.
pub fn generate_worlds(cfg: &ExperimentConfig) -> Result<(Vec<CityWorld>, Vec<CityWorld>)> {
    let wc = cfg.world_config();
    let make = |first: u64, n: usize| (0..n as u64).map(|i| generate_world(first + i, &wc)).collect::<Result<Vec<_>>>();
    let seen = make(cfg.u64("world.seed"), cfg.usize("world.seen"))?;
    let unseen = make(cfg.u64("world.unseen_seed"), cfg.usize("world.unseen"))?;
    if let Some(w) = unseen.iter().find(|u| seen.iter().any(|s| s.id == u.id)) {
        return Err(Error::Config(format!("world {} is both seen and unseen; separate world.seed and world.unseen_seed", w.id)));
    }
    Ok((seen, unseen))
}

pub fn load_worlds(out: &Path) -> Result<(Vec<CityWorld>, Vec<CityWorld>)> {
    let dir = Command::GenWorlds.dir(out);
    let index = dir.join(WORLD_INDEX);
    let text = std::fs::read_to_string(&index).map_err(|e| Error::io(&index, e))?;
    let (mut seen, mut unseen) = (Vec::new(), Vec::new());
    for line in text.lines().filter(|l| !l.is_empty()) {
        let (split, file) = line.split_once(' ').ok_or_else(|| Error::format("world index", &index, format!("bad line {line:?}")))?;
        let w = read_world(&dir.join(file))?;
        match split {
            "seen" => seen.push(w),
            "unseen" => unseen.push(w),
            _ => return Err(Error::format("world index", &index, format!("unknown split {split:?}"))),
        }
    }
    Ok((seen, unseen))
}

pub fn build_corpus(cfg: &ExperimentConfig, seen: &[CityWorld]) -> Result<Corpus> {
    build_dataset(seen, &cfg.dataset_config(), substream_seed(cfg.seed(), "corpus", 0))
}

pub fn stage1_curve_csv(curve: &[EpochLosses]) -> String {
    let mut out = String::from("epoch,L_IL,L_V,L_BC,L_WP,L_total\n");
    for (i, e) in curve.iter().enumerate() {
        let _ = writeln!(out, "{},{:e},{:e},{:e},{:e},{:e}", i + 1, e.l_il, e.l_v, e.l_bc, e.l_wp, e.total);
    }
    out
}

/// Which architecture change a training run applies on top of the configuration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ModelVariant {
    Base,
    DropChannel(usize),
    Flat,
}

/// Stage 1 from a fresh model initialized with `seed`.
pub fn train_il(cfg: &ExperimentConfig, demos: &[Demonstration], seen: &[CityWorld], seed: u64, variant: ModelVariant) -> Result<Stage1Result> {
    let mut pc = cfg.policy_config();
    match variant {
        ModelVariant::Base => {}
        ModelVariant::DropChannel(c) => {
            if !pc.drop_channels.contains(&c) {
                pc.drop_channels.push(c);
            }
        }
        ModelVariant::Flat => pc.flat = true,
    }
    let policy = Policy::new(pc, seed)?;
    let s1 = crate::training::Stage1Config { seed, ..cfg.stage1_config() };
    let r = train_stage1(policy, demos, seen, &s1)?;
    if let Some(why) = &r.aborted {
        return Err(Error::Numerical(format!("stage 1 aborted: {why}")));
    }
    Ok(r)
}

/// Rollout pool and probe episodes on the seen worlds.
pub fn stage2_episodes(cfg: &ExperimentConfig, seen: &[CityWorld]) -> Result<(Vec<EpisodeSpec>, Vec<EpisodeSpec>)> {
    let base = BenchmarkConfig { tiers: Difficulty::ALL.to_vec(), ..cfg.benchmark_config() };
    let draw = |n: usize, tag: &str| -> Result<Vec<EpisodeSpec>> {
        if n == 0 {
            return Ok(Vec::new());
        }
        let bc = BenchmarkConfig { episodes_per_tier: n, ..base.clone() };
        Ok(benchmark_episodes(seen, Split::Seen, &bc, substream_seed(cfg.seed(), tag, 0))?.into_iter().map(|(_, e)| e).collect())
    };
    Ok((draw(cfg.usize("ppo.pool_per_tier"), "rl-pool")?, draw(cfg.usize("ppo.probe_per_tier"), "rl-probe")?))
}

/// Stage 2 from a stage-1 model with the given `lambda_rl` and seed.
#[allow(clippy::too_many_arguments)]
pub fn train_rl(cfg: &ExperimentConfig, stage1: Policy, demos: &[Demonstration], seen: &[CityWorld], pool: &[EpisodeSpec], probe: &[EpisodeSpec], lambda_rl: f64, seed: u64) -> Result<Stage2Result> {
    let reward = cfg.reward_config();
    let prior = cfg.prior_config();
    let s1 = cfg.stage1_config();
    let data = Stage2Data { worlds: seen, pool, demos, probe, reward: &reward, prior: &prior, stage1_lambda_bc: s1.lambda_bc, stage1_lambda_wp: s1.lambda_wp };
    let ppo = crate::training::PpoConfig { lambda_rl, seed, ..cfg.ppo_config() };
    let r = train_stage2(stage1, &data, &ppo)?;
    if let Some(why) = &r.aborted {
        return Err(Error::Numerical(format!("stage 2 aborted: {why}")));
    }
    Ok(r)
}

pub fn policy_text(policy: &Policy, cfg: &ExperimentConfig, stage: &str, seed: u64) -> String {
    let mut meta = BTreeMap::new();
    meta.insert("stage".to_string(), stage.to_string());
    meta.insert("train_seed".to_string(), seed.to_string());
    meta.insert("config_hash".to_string(), cfg.hash());
    policy.to_checkpoint(meta, None).to_text()
}

pub fn read_policy(path: &Path) -> Result<Policy> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Policy::from_checkpoint(&Checkpoint::parse(&text).map_err(|e| Error::format("checkpoint", path, e.to_string()))?)
}

/// Benchmarks `agent` on both splits over `eval.seeds`.
pub fn evaluate<'a>(cfg: &ExperimentConfig, agent: &(dyn Fn() -> Box<dyn Navigator + 'a> + Sync), seen: &[CityWorld], unseen: &[CityWorld]) -> Result<BenchmarkReport> {
    run_benchmark(agent, seen, unseen, &cfg.benchmark_config(), &cfg.u64_list("eval.seeds"))
}

/// Trained sweep models keyed by variant name and training seed.
pub struct SweepOutcome {
    pub report: AblationReport,
    pub models: Vec<(String, u64, Option<Policy>)>,
    /// Stage-1 models shared by the `lambda_rl` variants, per training seed.
    pub stage1: Vec<(u64, Policy)>,
    pub failures: Vec<String>,
}

/// Name of the reference variant: the configured `ppo.lambda_rl`.
pub fn reference_variant(cfg: &ExperimentConfig) -> String {
    format!("lambda_rl={}", cfg.f64("ppo.lambda_rl"))
}

/// Trains every variant for every training seed and benchmarks them on
/// shared episodes. `lambda_rl` variants share one stage-1 model per seed;
/// the channel-drop and flat variants train their own stage 1 and use
/// `ppo.lambda_rl` in stage 2. A numerical failure leaves that model untrained.
pub fn run_sweep(cfg: &ExperimentConfig, seen: &[CityWorld], unseen: &[CityWorld], demos: &[Demonstration]) -> Result<SweepOutcome> {
    let mut axes = cfg.ablation_axes();
    let lambda_ref = cfg.f64("ppo.lambda_rl");
    if !axes.lambda_rl.contains(&lambda_ref) {
        axes.lambda_rl.push(lambda_ref);
    }
    let variants = axes.variants()?;
    let (pool, probe) = stage2_episodes(cfg, seen)?;
    let seeds = cfg.u64_list("sweep.train_seeds");
    let mut failures = Vec::new();
    let mut models: Vec<(String, u64, Option<Policy>)> = Vec::new();
    let mut stage1 = Vec::new();
    let mut keep = |name: &str, seed: u64, r: Result<Policy>, failures: &mut Vec<String>| -> Result<()> {
        match r {
            Ok(p) => models.push((name.to_string(), seed, Some(p))),
            Err(e @ Error::Numerical(_)) | Err(e @ Error::Numerics(_)) => {
                failures.push(format!("{name} seed {seed}: {e}"));
                models.push((name.to_string(), seed, None));
            }
            Err(e) => return Err(e),
        }
        Ok(())
    };
    for &seed in &seeds {
        let base = train_il(cfg, demos, seen, seed, ModelVariant::Base);
        let base = match base {
            Ok(r) => Some(r.policy),
            Err(e @ Error::Numerical(_)) => {
                failures.push(format!("stage 1 seed {seed}: {e}"));
                None
            }
            Err(e) => return Err(e),
        };
        if let Some(p) = &base {
            stage1.push((seed, p.clone()));
        }
        for v in &variants {
            let r = match v.kind {
                VariantKind::LambdaRl(l) => match &base {
                    Some(p) => train_rl(cfg, p.clone(), demos, seen, &pool, &probe, l, seed).map(|r| r.policy),
                    None => Err(Error::Numerical("stage 1 failed".into())),
                },
                VariantKind::DropChannel(c) => {
                    train_il(cfg, demos, seen, seed, ModelVariant::DropChannel(c)).and_then(|r| train_rl(cfg, r.policy, demos, seen, &pool, &probe, lambda_ref, seed)).map(|r| r.policy)
                }
                VariantKind::Flat => train_il(cfg, demos, seen, seed, ModelVariant::Flat).and_then(|r| train_rl(cfg, r.policy, demos, seen, &pool, &probe, lambda_ref, seed)).map(|r| r.policy),
            };
            keep(&v.name, seed, r, &mut failures)?;
        }
    }
    let grouped: Vec<VariantModels<'_>> =
        variants.iter().map(|v| VariantModels { variant: v.clone(), models: models.iter().filter(|m| m.0 == v.name).map(|m| (m.1, m.2.as_ref())).collect() }).collect();
    let report = ablation_suite(&grouped, &reference_variant(cfg), seen, unseen, &cfg.benchmark_config(), &cfg.u64_list("eval.seeds"))?;
    Ok(SweepOutcome { report, models, stage1, failures })
}

/// Runs one command and writes its artifacts, the echoed configuration and
/// the run manifest into the command's run directory.
pub fn run_command(cmd: &Command, cfg: &ExperimentConfig, force: bool) -> Result<RunManifest> {
    let started = unix_now();
    let out = cfg.out_dir();
    let name = cmd.name();
    let dir = cmd.dir(out);
    let mut files = Vec::new();
    let mut notes = String::new();
    match cmd {
        Command::GenWorlds => {
            let (seen, unseen) = generate_worlds(cfg)?;
            prepare_dir(&dir, force)?;
            let mut index = String::new();
            for (split, worlds) in [("seen", &seen), ("unseen", &unseen)] {
                for w in worlds {
                    let rel = format!("{split}/{}.txt", w.id);
                    let p = dir.join(&rel);
                    std::fs::create_dir_all(p.parent().expect("has parent")).map_err(|e| Error::io(&p, e))?;
                    write_world(&p, w)?;
                    files.push(p);
                    let _ = writeln!(index, "{split} {rel}");
                }
            }
            write_file(dir.join(WORLD_INDEX), &index, &mut files)?;
        }
        Command::BuildCorpus => {
            prerequisite(name, &Command::GenWorlds, out)?;
            let (seen, _) = load_worlds(out)?;
            let corpus = build_corpus(cfg, &seen)?;
            prepare_dir(&dir, force)?;
            files.extend(save_corpus(&dir, &corpus, &seen)?);
        }
        Command::TrainIl => {
            prerequisite(name, &Command::GenWorlds, out)?;
            let cdir = prerequisite(name, &Command::BuildCorpus, out)?;
            let (seen, _) = load_worlds(out)?;
            let corpus = load_corpus(&cdir, &seen, &cfg.demo_config())?;
            let r = train_il(cfg, &corpus.demos, &seen, cfg.seed(), ModelVariant::Base)?;
            prepare_dir(&dir, force)?;
            write_file(dir.join(POLICY_FILE), &policy_text(&r.policy, cfg, "il", cfg.seed()), &mut files)?;
            write_file(dir.join("curve.csv"), &stage1_curve_csv(&r.curve), &mut files)?;
        }
        Command::TrainRl => {
            let il = prerequisite(name, &Command::TrainIl, out)?;
            let cdir = prerequisite(name, &Command::BuildCorpus, out)?;
            let (seen, _) = load_worlds(out)?;
            let corpus = load_corpus(&cdir, &seen, &cfg.demo_config())?;
            let stage1 = read_policy(&il.join(POLICY_FILE))?;
            let (pool, probe) = stage2_episodes(cfg, &seen)?;
            let r = train_rl(cfg, stage1, &corpus.demos, &seen, &pool, &probe, cfg.f64("ppo.lambda_rl"), cfg.seed())?;
            prepare_dir(&dir, force)?;
            write_file(dir.join(POLICY_FILE), &policy_text(&r.policy, cfg, "rl", cfg.seed()), &mut files)?;
            write_file(dir.join("curve.csv"), &stage2_curve_csv(&r.curve), &mut files)?;
            let _ = writeln!(notes, "first_mean_ratio = {:?}\ninitial_value_loss = {:?}", r.first_mean_ratio, r.initial_value_loss);
        }
        Command::Eval => {
            prerequisite(name, &Command::GenWorlds, out)?;
            let (seen, unseen) = load_worlds(out)?;
            let model = cfg.get("eval.model");
            let report = match model {
                "teacher" => {
                    let eps = cfg.f64("model.eps_wp");
                    evaluate(cfg, &|| Box::new(TeacherAgent::new(eps)), &seen, &unseen)?
                }
                "random" => evaluate(cfg, &|| Box::new(RandomAgent), &seen, &unseen)?,
                _ => {
                    let producer = if model == "il" { Command::TrainIl } else { Command::TrainRl };
                    let pdir = prerequisite(name, &producer, out)?;
                    let policy = read_policy(&pdir.join(POLICY_FILE))?;
                    evaluate(cfg, &|| Box::new(ModelAgent::new(&policy, DecodeMode::Greedy)), &seen, &unseen)?
                }
            };
            prepare_dir(&dir, force)?;
            files.extend(report.save(&dir)?);
        }
        Command::Sweep => {
            prerequisite(name, &Command::GenWorlds, out)?;
            let cdir = prerequisite(name, &Command::BuildCorpus, out)?;
            let (seen, unseen) = load_worlds(out)?;
            let corpus = load_corpus(&cdir, &seen, &cfg.demo_config())?;
            let outcome = run_sweep(cfg, &seen, &unseen, &corpus.demos)?;
            prepare_dir(&dir, force)?;
            for (variant, seed, model) in &outcome.models {
                if let Some(p) = model {
                    write_file(dir.join("models").join(variant.replace('=', "_")).join(format!("seed{seed}.ckpt")), &policy_text(p, cfg, variant, *seed), &mut files)?;
                }
            }
            write_file(dir.join("ablation.csv"), &outcome.report.to_csv(), &mut files)?;
            write_file(dir.join("ablation.txt"), &outcome.report.to_table(), &mut files)?;
            for f in &outcome.failures {
                let _ = writeln!(notes, "{f}");
            }
        }
        Command::Replay { log, goal } => {
            if !log.exists() {
                return Err(Error::MissingPrerequisite(format!("replay needs a trajectory log; {} does not exist (run eval with eval.keep_logs=true or build-corpus)", log.display())));
            }
            let (rows, labels) = read_log(log)?;
            let r = replay(&rows, labels.as_deref(), *goal, cfg.f64("world.cell_size"), cfg.f64("eval.threshold_m"));
            prepare_dir(&dir, force)?;
            write_file(dir.join("replay.txt"), r.to_text(), &mut files)?;
            write_file(dir.join("replay.csv"), r.to_csv(), &mut files)?;
        }
    }
    if !notes.is_empty() {
        write_file(dir.join("notes.txt"), &notes, &mut files)?;
    }
    write_file(dir.join(CONFIG_FILE), &cfg.to_text(), &mut files)?;
    let manifest = RunManifest { command: name.to_string(), config_hash: cfg.hash(), code_version: CODE_VERSION.to_string(), started, finished: unix_now(), files: relative_files(&dir, &files) };
    manifest.write(&dir)?;
    Ok(manifest)
}
