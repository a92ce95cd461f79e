//! Acceptance suite: one test per criterion, each printing a PASS/FAIL line.
//!
//! Tests share one lock so that the timed criteria are measured on an idle
//! core, and criteria 9 to 11 share one ablation sweep.

use std::io::Write as _;
use std::path::Path;
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::Instant;

use rand::Rng as _;

use htnav::agent::{run_episode, EpisodeOptions, Policy, RandomAgent, ScriptedAgent, TeacherAgent};
use htnav::evaluation::{aggregate, episode_metrics, path_metrics, run_benchmark, EpisodeResult, Split};
use htnav::harness::{build_corpus, generate_worlds, run_command, run_sweep, train_il, Command, ExperimentConfig, ModelVariant, SweepOutcome};
use htnav::mapper::{EncoderConfig, MapEncoder, ENCODER_INPUT_CHANNELS};
use htnav::numerics::{check_graph_gradients, primitive_gradient_suite, BnPass, Graph, ParamStore, Tensor};
use htnav::rng::substream;
use htnav::teacher::{build_dataset, Demonstration};
use htnav::training::{
    collect_rollout, compute_gae, compute_reward, corridor_probe, critic_value_loss, discounted_return, ppo_clip_objective, reward_terms, sample_refs, supervised_batch, train_corridor, train_stage2,
    wrapped_angle_diff, CorridorConfig, GaeInput, PpoConfig, RewardConfig, Stage2Data,
};
use htnav::world::{generate_world, Difficulty, EpisodeSpec, Heading, UavState, WorldConfig};

const DESK: &str = include_str!("../../../configs/desk.conf");

fn serial() -> MutexGuard<'static, ()> {
    static LOCK: Mutex<()> = Mutex::new(());
    LOCK.lock().unwrap_or_else(|e| e.into_inner())
}

/// Prints the verdict outside the test harness's output capture, then asserts it.
fn verdict(n: usize, name: &str, pass: bool, detail: &str) {
    let line = format!("criterion {n:>2} {name}: {} | {detail}\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stdout().write_all(line.as_bytes());
    assert!(pass, "criterion {n} {name} failed: {detail}");
}

fn say(text: &str) {
    let _ = std::io::stdout().write_all(text.as_bytes());
}

fn desk(overrides: &[String]) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.apply_text(DESK, "desk.conf").unwrap();
    cfg.apply_overrides(overrides).unwrap();
    cfg.validate().unwrap();
    cfg
}

fn at(x: i32, y: i32, h: Heading) -> UavState {
    UavState::new(x, y, 3, h)
}

#[test]
fn c01_gradient_checks() {
    let _g = serial();
    let t = Instant::now();
    let mut worst_prim = 0.0f64;
    let mut all = true;
    for seed in [1, 2, 3] {
        for (name, r) in primitive_gradient_suite(seed, 1e-5, 1e-6).unwrap() {
            worst_prim = worst_prim.max(r.max_rel_err);
            if !r.pass {
                say(&format!("  primitive {name} seed {seed}: {:.3e}\n", r.max_rel_err));
                all = false;
            }
        }
    }
    let mut worst_pipe = 0.0f64;
    for seed in 0..3u64 {
        let mut store = ParamStore::new();
        let mut rng = substream(seed, "acceptance-encoder", 0);
        let enc = MapEncoder::new(&mut store, "map", &EncoderConfig { c0: 4, stages: 2, d: 8 }, &mut rng).unwrap();
        let n = 2 * ENCODER_INPUT_CHANNELS * 16 * 16;
        let input = Tensor::new(vec![2, ENCODER_INPUT_CHANNELS, 16, 16], (0..n).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
        let ids = enc.param_ids();
        let mut inputs = vec![input];
        inputs.extend(ids.iter().map(|&id| store.value(id).clone()));
        let r = check_graph_gradients(&inputs, seed, 1e-5, 1e-5, |g, vars| {
            for (id, v) in ids.iter().zip(&vars[1..]) {
                g.bind_param(*id, *v);
            }
            enc.forward(g, &store, vars[0], &mut BnPass::train())
        })
        .unwrap();
        worst_pipe = worst_pipe.max(r.max_rel_err);
        all &= r.pass;
    }
    let secs = t.elapsed().as_secs_f64();
    verdict(1, "gradient checks", all && secs < 60.0, &format!("max rel err primitives {worst_prim:.2e} (tol 1e-6), encoder pipeline {worst_pipe:.2e} (tol 1e-5), {secs:.1} s"));
}

#[test]
fn c02_reward() {
    let _g = serial();
    let t = Instant::now();
    let c = RewardConfig::default();
    let mut ok = true;
    let s = at(0, 0, Heading::West);
    ok &= reward_terms(&s, &s, (40.0, 0.0), (40.0, 0.0), 1.0, &c).clipped == c.delta;
    // The 1.49 case needs d_t >= d_goal, so the goal radius is narrowed below 9 m.
    let narrow = RewardConfig { d_goal: 5.0, ..c };
    let r = reward_terms(&at(0, 0, Heading::East), &at(1, 0, Heading::East), (10.0, 0.0), (10.0, 0.0), 1.0, &narrow);
    ok &= (r.raw - 1.49).abs() < 1e-12 && r.clipped == r.raw;
    let r = reward_terms(&at(0, 0, Heading::East), &at(1, 0, Heading::East), (10.0, 0.0), (10.0, 0.0), 1.0, &c);
    ok &= (r.raw - 11.49).abs() < 1e-12 && r.clipped == 5.0;
    ok &= (wrapped_angle_diff(350f64.to_radians(), 10f64.to_radians()) - 20f64.to_radians()).abs() < 1e-12;

    let world = generate_world(3, &WorldConfig::desk()).unwrap();
    let mut rng = substream(0, "acceptance-reward-fuzz", 0);
    let mut outside = 0usize;
    for _ in 0..1_000_000 {
        let p = UavState::new(rng.gen_range(0..32), rng.gen_range(0..32), rng.gen_range(1..=6), Heading::ALL[rng.gen_range(0..4)]);
        let q = UavState::new(rng.gen_range(0..32), rng.gen_range(0..32), rng.gen_range(1..=6), Heading::ALL[rng.gen_range(0..4)]);
        let goal = (rng.gen_range(0.0..32.0), rng.gen_range(0.0..32.0));
        let r = compute_reward(&p, &q, goal, &world, &c);
        if !(r >= c.r_min && r <= c.r_max) {
            outside += 1;
        }
    }
    let mut asym = 0usize;
    for i in 0..360 {
        for j in 0..360 {
            let (a, b) = ((i as f64).to_radians(), (j as f64).to_radians());
            let (d1, d2) = (wrapped_angle_diff(a, b), wrapped_angle_diff(b, a));
            if d1 != d2 || !(0.0..=std::f64::consts::PI).contains(&d1) {
                asym += 1;
            }
        }
    }
    let secs = t.elapsed().as_secs_f64();
    verdict(
        2,
        "reward",
        ok && outside == 0 && asym == 0 && secs < 30.0,
        &format!("hand cases {}, fuzz 1e6 out of bounds {outside}, angle grid violations {asym}, {secs:.1} s", if ok { "match" } else { "differ" }),
    );
}

fn fixture_demos(world: &htnav::world::CityWorld, episodes: usize, cfg: &ExperimentConfig) -> Vec<Demonstration> {
    let dc = htnav::teacher::DatasetConfig { episodes, ..cfg.dataset_config() };
    build_dataset(std::slice::from_ref(world), &dc, 5).unwrap().demos
}

fn small_model_overrides() -> Vec<String> {
    ["model.c0=4", "model.stages=1", "model.map_dim=8", "model.hidden=16", "model.actor_hidden=16"].iter().map(|s| s.to_string()).collect()
}

#[test]
fn c03_ppo_machinery() {
    let _g = serial();
    let clip =
        ppo_clip_objective(0.0, 0.0, 1.0, 0.2) == 1.0 && (ppo_clip_objective(2f64.ln(), 0.0, 1.0, 0.2) - 1.2).abs() < 1e-12 && (ppo_clip_objective(0.5f64.ln(), 0.0, -1.0, 0.2) + 0.8).abs() < 1e-12;
    let gamma = 0.99;
    let mut worst = 0.0f64;
    for seed in 0..100 {
        let mut rng = substream(seed, "acceptance-gae", 0);
        let len = rng.gen_range(1..80);
        let r: Vec<f64> = (0..len).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let v: Vec<f64> = (0..len).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let mut nv = v[1..].to_vec();
        nv.push(0.0);
        let mut ends = vec![false; len];
        ends[len - 1] = true;
        let (adv, _) = compute_gae(&GaeInput { rewards: &r, values: &v, next_values: &nv, dones: &ends, episode_ends: &ends }, gamma, 1.0).unwrap();
        // Monte-Carlo return by direct summation.
        for t in 0..len {
            let g: f64 = (t..len).map(|k| gamma.powi((k - t) as i32) * r[k]).sum();
            worst = worst.max((adv[t] - (g - v[t])).abs());
        }
        let suffix = discounted_return(&r, gamma);
        worst = worst.max((suffix[0] - (adv[0] + v[0])).abs());
    }

    let cfg = desk(&small_model_overrides());
    let world = generate_world(21, &cfg.world_config()).unwrap();
    let demos = fixture_demos(&world, 3, &cfg);
    let policy = Policy::new(cfg.policy_config(), 1).unwrap();
    let pool: Vec<EpisodeSpec> = demos.iter().map(|d| d.episode.clone()).collect();
    let (reward, prior) = (cfg.reward_config(), cfg.prior_config());
    let worlds = [world];
    let data = Stage2Data { worlds: &worlds, pool: &pool, demos: &demos, probe: &[], reward: &reward, prior: &prior, stage1_lambda_bc: 1.0, stage1_lambda_wp: 1.0 };
    let ppo = PpoConfig { rollout_steps: 32, minibatch_size: 16, expert_batch: 4, epochs_per_update: 1, max_updates: 1, probe_every: 0, ..cfg.ppo_config() };
    let ratio = train_stage2(policy, &data, &ppo).unwrap().first_mean_ratio.unwrap();
    let pass = clip && worst < 1e-9 && (ratio - 1.0).abs() < 1e-6;
    verdict(3, "PPO machinery", pass, &format!("clip cases {}, GAE(1) vs MC max err {worst:.2e}, first ratio {ratio:.9}", if clip { "exact" } else { "differ" }));
}

/// Direct reimplementation: (NE, success, oracle, SPL term).
fn metric_oracle(poses: &[(i32, i32)], goal: (i32, i32), stopped: bool, cell: f64, thr: f64, shortest: f64) -> (f64, bool, bool, f64) {
    let d = |p: (i32, i32), q: (i32, i32)| (((p.0 - q.0) as f64 * cell).powi(2) + ((p.1 - q.1) as f64 * cell).powi(2)).sqrt();
    let ne = d(*poses.last().unwrap(), goal);
    let success = stopped && ne <= thr;
    let oracle = poses.iter().any(|&p| d(p, goal) <= thr);
    let path: f64 = poses.windows(2).map(|w| d(w[0], w[1])).sum();
    let spl = match (success, shortest.max(path)) {
        (false, _) => 0.0,
        (true, m) if m == 0.0 => 1.0,
        (true, m) => shortest / m,
    };
    (ne, success, oracle, spl)
}

#[test]
fn c04_metric_oracle() {
    let _g = serial();
    let mut rng = substream(1, "acceptance-metrics", 0);
    let (mut worst, mut flags, mut inequalities) = (0.0f64, 0usize, 0usize);
    let mut results: Vec<EpisodeResult> = Vec::new();
    let mut expected = Vec::new();
    for i in 0..1000 {
        let mut p = (rng.gen_range(0..32), rng.gen_range(0..32));
        let mut poses = vec![p];
        for _ in 1..rng.gen_range(1..50) {
            match rng.gen_range(0..5) {
                0 => p.0 += 1,
                1 => p.0 -= 1,
                2 => p.1 += 1,
                3 => p.1 -= 1,
                _ => {}
            }
            poses.push(p);
        }
        let goal = (rng.gen_range(0..32), rng.gen_range(0..32));
        let stopped = rng.gen_bool(0.7);
        let cell = [1.0, 5.0, 7.5][i % 3];
        let shortest = rng.gen_range(0.0..120.0);
        let spec = EpisodeSpec { goal, shortest_path_m: shortest, difficulty: Difficulty::ALL[i % 3], ..template_episode() };
        let states: Vec<UavState> = poses.iter().map(|&(x, y)| at(x, y, Heading::East)).collect();
        let r = path_metrics(&spec, &states, stopped, cell, 20.0).unwrap();
        let o = metric_oracle(&poses, goal, stopped, cell, 20.0, shortest);
        worst = worst.max((r.ne_m - o.0).abs()).max((r.spl_term() - o.3).abs());
        flags += usize::from((r.success, r.oracle) != (o.1, o.2));
        inequalities += usize::from(r.spl_term() > f64::from(u8::from(r.success)) || (r.success && !r.oracle));
        results.push(r);
        expected.push(o);
    }
    let c = aggregate(&results).unwrap();
    let n = expected.len() as f64;
    let mean = |f: &dyn Fn(&(f64, bool, bool, f64)) -> f64| expected.iter().map(f).sum::<f64>() / n;
    worst = worst
        .max((c.ne - mean(&|o| o.0)).abs())
        .max((c.sr - 100.0 * mean(&|o| f64::from(u8::from(o.1)))).abs())
        .max((c.osr - 100.0 * mean(&|o| f64::from(u8::from(o.2)))).abs())
        .max((c.spl - 100.0 * mean(&|o| o.3)).abs());
    verdict(4, "metric oracle", worst < 1e-9 && flags == 0 && inequalities == 0, &format!("max abs diff {worst:.2e}, flag mismatches {flags}, inequality violations {inequalities}"));
}

fn template_episode() -> EpisodeSpec {
    use htnav::world::{Band, GoalDescriptor, Sector};
    EpisodeSpec {
        id: "m".into(),
        world_id: "w".into(),
        start: at(0, 0, Heading::East),
        goal: (0, 0),
        descriptor: GoalDescriptor { landmark_id: 0, sector: Sector::E, band: Band::Near, tag: 0 },
        difficulty: Difficulty::Easy,
        shortest_path_m: 0.0,
        max_steps: 100,
    }
}

#[test]
fn c05_teacher() {
    let _g = serial();
    let cfg = desk(&["world.seen=8".to_string(), "world.unseen=4".to_string(), "corpus.episodes=500".to_string()]);
    let (seen, unseen) = generate_worlds(&cfg).unwrap();
    let corpus = build_corpus(&cfg, &seen).unwrap();
    let opts = EpisodeOptions { prior: cfg.prior_config(), reward: None, keep_maps: false };
    let mut replayed = 0;
    let mut bellman = 0.0f64;
    let gamma = cfg.f64("teacher.gamma");
    for d in &corpus.demos {
        let world = seen.iter().find(|w| w.id == d.episode.world_id).unwrap();
        let mut agent = ScriptedAgent::new(d.steps.iter().map(|s| s.action).collect());
        let traj = run_episode(&mut agent, world, &d.episode, &opts, &mut substream(0, "acceptance-replay", 0)).unwrap();
        if episode_metrics(&traj, &d.episode, world.cell_size, 20.0).unwrap().success {
            replayed += 1;
        }
        for w in d.steps.windows(2) {
            bellman = bellman.max((w[0].value - (w[0].reward + gamma * w[1].value)).abs());
        }
        let last = d.steps.last().unwrap();
        bellman = bellman.max((last.value - last.reward).abs());
    }
    let bc = cfg.benchmark_config();
    let report = run_benchmark(&|| Box::new(TeacherAgent::new(cfg.f64("model.eps_wp"))), &seen, &unseen, &bc, &[1]).unwrap();
    let min_sr = report.rows.iter().map(|r| r.cell.sr).fold(f64::INFINITY, f64::min);
    let n = corpus.demos.len();
    let pass = n == 500 && replayed == n && bellman <= 1e-12 && min_sr == 100.0;
    verdict(5, "teacher soundness", pass, &format!("replay {replayed}/{n}, Bellman max err {bellman:.2e}, benchmark min SR {min_sr:.1} over {} rows", report.rows.len()));
}

#[test]
fn c06_stage1_learnability() {
    let _g = serial();
    let cfg = desk(&["world.seen=4".to_string(), "corpus.episodes=32".to_string(), "il.epochs=200".to_string()]);
    let (seen, _) = generate_worlds(&cfg).unwrap();
    let corpus = build_corpus(&cfg, &seen).unwrap();
    let r = train_il(&cfg, &corpus.demos, &seen, 0, ModelVariant::Base).unwrap();
    let first = r.curve[0].l_il;
    let best_epoch = r.curve.iter().position(|e| e.l_il < 0.1 * first);
    let policy = &r.policy;
    let refs = sample_refs(&corpus.demos);
    let mut goal_err = 0.0;
    for chunk in refs.chunks(128) {
        let batch = supervised_batch(policy, &corpus.demos, &seen, chunk, None).unwrap();
        let mut g = Graph::new();
        let f = policy.forward(&mut g, &batch.inputs, None, &mut BnPass::Infer).unwrap();
        for (i, rf) in chunk.iter().enumerate() {
            let d = &corpus.demos[rf.demo];
            let out = policy.decode(&g, &f.heads, f.logits, i);
            let cell = seen.iter().find(|w| w.id == d.episode.world_id).unwrap().cell_size;
            let goal = d.goal();
            goal_err += (out.goal.0 - goal.0).hypot(out.goal.1 - goal.1) * cell;
        }
    }
    let goal_ne = goal_err / refs.len() as f64;
    let opts = EpisodeOptions { prior: cfg.prior_config(), reward: None, keep_maps: false };
    let mut random = Vec::new();
    for (j, d) in corpus.demos.iter().enumerate() {
        let world = seen.iter().find(|w| w.id == d.episode.world_id).unwrap();
        let traj = run_episode(&mut RandomAgent, world, &d.episode, &opts, &mut substream(0, "acceptance-random", j as u64)).unwrap();
        random.push(episode_metrics(&traj, &d.episode, world.cell_size, 20.0).unwrap());
    }
    let random_ne = aggregate(&random).unwrap().ne;
    let pass = best_epoch.is_some() && goal_ne < 0.25 * random_ne;
    verdict(
        6,
        "stage-1 learnability",
        pass,
        &format!("L_IL {first:.4} -> {:.4}, below 10% at epoch {best_epoch:?}; goal-head NE {goal_ne:.2} m vs random-policy NE {random_ne:.2} m", r.curve.last().unwrap().l_il),
    );
}

#[test]
fn c07_corridor() {
    let _g = serial();
    let t = Instant::now();
    let cfg = CorridorConfig::default();
    let mut lines = Vec::new();
    let mut solved = 0;
    for seed in 0..3 {
        let r = train_corridor(&cfg, seed).unwrap();
        let sr = corridor_probe(&r.policy, &cfg).unwrap();
        if r.solved_at.is_some_and(|s| s <= 20_000) && sr >= 95.0 {
            solved += 1;
        }
        lines.push(format!("seed {seed}: steps {:?} probe SR {sr:.0}", r.solved_at));
    }
    let secs = t.elapsed().as_secs_f64();
    verdict(7, "corridor PPO", solved == 3 && secs < 300.0, &format!("{}; {secs:.1} s", lines.join(", ")));
}

#[test]
fn c08_warm_start() {
    let _g = serial();
    let cfg = desk(&["world.seen=4".to_string(), "corpus.episodes=48".to_string(), "il.epochs=15".to_string(), "ppo.pool_per_tier=10".to_string()]);
    let (seen, _) = generate_worlds(&cfg).unwrap();
    let corpus = build_corpus(&cfg, &seen).unwrap();
    let (pool, _) = htnav::harness::stage2_episodes(&cfg, &seen).unwrap();
    let mut wins = 0;
    let mut lines = Vec::new();
    for seed in 0..3u64 {
        let stage1 = train_il(&cfg, &corpus.demos, &seen, seed, ModelVariant::Base).unwrap().policy;
        let ppo = PpoConfig { seed, ..cfg.ppo_config() };
        let (rollout, _) = collect_rollout(&stage1, &seen, &pool, &cfg.reward_config(), &cfg.prior_config(), &ppo, 0).unwrap();
        let warm = critic_value_loss(&stage1, &rollout, &ppo).unwrap();
        let mut fresh = stage1.clone();
        fresh.reset_value_head(seed).unwrap();
        let cold = critic_value_loss(&fresh, &rollout, &ppo).unwrap();
        wins += usize::from(warm < cold);
        lines.push(format!("seed {seed}: warm {warm:.4} fresh {cold:.4}"));
    }
    verdict(8, "warm-started critic", wins == 3, &lines.join(", "));
}

/// Ablation sweep on the desk preset shared by criteria 9 to 11.
fn sweep() -> &'static (ExperimentConfig, SweepOutcome) {
    static SWEEP: OnceLock<(ExperimentConfig, SweepOutcome)> = OnceLock::new();
    SWEEP.get_or_init(|| {
        let cfg = desk(&[]);
        let (seen, unseen) = generate_worlds(&cfg).unwrap();
        let corpus = build_corpus(&cfg, &seen).unwrap();
        let t = Instant::now();
        let out = run_sweep(&cfg, &seen, &unseen, &corpus.demos).unwrap();
        say(&format!("ablation sweep ({:.0} s, failures {:?}):\n{}", t.elapsed().as_secs_f64(), out.failures, out.report.to_table()));
        (cfg, out)
    })
}

fn sr(out: &SweepOutcome, variant: &str, split: Split, tier: Option<Difficulty>) -> f64 {
    out.report.variant(variant).and_then(|v| v.mean_cell(split, tier)).map_or(f64::NAN, |c| c.sr)
}

#[test]
fn c09_hybrid_beats_imitation() {
    let _g = serial();
    let (cfg, out) = sweep();
    let lambdas = cfg.f64_list("sweep.lambda_rl");
    let row: Vec<String> = lambdas.iter().map(|l| format!("λ={l}: {:.2}", sr(out, &format!("lambda_rl={l}"), Split::Unseen, None))).collect();
    let gap = sr(out, "lambda_rl=0.2", Split::Unseen, None) - sr(out, "lambda_rl=0", Split::Unseen, None);
    let seeds = cfg.u64_list("sweep.train_seeds").len();
    verdict(9, "hybrid vs imitation", seeds >= 3 && gap >= 5.0, &format!("unseen SR over {seeds} seeds: {}; SR(0.2) - SR(0) = {gap:.2} (target >= 5)", row.join(", ")));
}

#[test]
fn c10_landmark_prior() {
    let _g = serial();
    let (cfg, out) = sweep();
    let reference = htnav::harness::reference_variant(cfg);
    let base = sr(out, &reference, Split::Unseen, None);
    let dropped = sr(out, "drop=landmark_prior", Split::Unseen, None);
    let relative = if base > 0.0 { (base - dropped) / base } else { f64::NAN };
    verdict(10, "landmark prior", relative >= 0.5, &format!("unseen SR {reference} {base:.2}, without landmark prior {dropped:.2}, relative drop {:.0}% (target >= 50%)", 100.0 * relative));
}

#[test]
fn c11_tiered_vs_flat() {
    let _g = serial();
    let (cfg, out) = sweep();
    let reference = htnav::harness::reference_variant(cfg);
    let mut lines = Vec::new();
    for tier in Difficulty::ALL {
        let cell = |v: &str| out.report.variant(v).and_then(|r| r.mean_cell(Split::Unseen, Some(tier)));
        let (t, f) = (cell(&reference).unwrap(), cell("flat").unwrap());
        lines.push(format!("{tier:?} tiered SR {:.2} SPL {:.2} / flat SR {:.2} SPL {:.2}", t.sr, t.spl, f.sr, f.spl));
    }
    let d = out.report.delta("flat", Split::Unseen, Some(Difficulty::Hard)).unwrap();
    let pass = d.sr <= 0.0 && d.spl <= 0.0;
    verdict(11, "tiered vs flat", pass, &format!("unseen {}; hard paired flat-minus-tiered dSR {:.2} dSPL {:.2} over {} seeds", lines.join("; "), d.sr, d.spl, d.pairs));
}

fn pipeline_reports(out: &Path) -> Vec<(String, Vec<u8>)> {
    let mut overrides: Vec<String> = [
        "world.seen=3",
        "world.unseen=2",
        "corpus.episodes=24",
        "il.epochs=3",
        "ppo.max_updates=2",
        "ppo.rollout_steps=128",
        "ppo.pool_per_tier=4",
        "ppo.probe_per_tier=1",
        "eval.episodes_per_tier=4",
        "eval.seeds=1",
        "eval.keep_logs=true",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    overrides.extend(small_model_overrides());
    overrides.push(format!("run.out={}", out.display()));
    let cfg = desk(&overrides);
    for cmd in [Command::GenWorlds, Command::BuildCorpus, Command::TrainIl, Command::TrainRl, Command::Eval] {
        run_command(&cmd, &cfg, false).unwrap();
    }
    let dir = Command::Eval.dir(out);
    let mut files = Vec::new();
    let mut stack = vec![dir.clone()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(&dir).unwrap().to_string_lossy().into_owned();
                // The manifest carries wall-clock times and the echoed config the output path.
                if rel != htnav::harness::MANIFEST_FILE && rel != htnav::harness::CONFIG_FILE {
                    files.push((rel, std::fs::read(&p).unwrap()));
                }
            }
        }
    }
    files.sort();
    files
}

#[test]
fn c12_reproducibility() {
    let _g = serial();
    let tmp = tempfile::tempdir().unwrap();
    let a = pipeline_reports(&tmp.path().join("a"));
    let b = pipeline_reports(&tmp.path().join("b"));
    let same = !a.is_empty() && a == b;
    let bytes: usize = a.iter().map(|f| f.1.len()).sum();
    verdict(12, "reproducibility", same, &format!("{} evaluation files ({bytes} bytes) {}", a.len(), if same { "byte-identical" } else { "differ" }));
}
