use std::f64::consts::PI;

use proptest::prelude::*;
use rand::Rng as _;

use super::*;
use crate::agent::{EnvDims, Policy, PolicyConfig};
use crate::error::Error;
use crate::mapper::{EncoderConfig, PriorConfig};
use crate::numerics::{AdamConfig, Graph, Tensor};
use crate::rng::substream;
use crate::teacher::{build_dataset, DatasetConfig, DemoConfig, Demonstration};
use crate::world::{generate_world, sample_episode, CityWorld, Difficulty, EpisodeConfig, EpisodeSpec, Heading, UavState, WorldConfig};

fn at(x: i32, y: i32, h: Heading) -> UavState {
    UavState::new(x, y, 3, h)
}

#[test]
fn reward_examples() {
    let c = RewardConfig::default();
    // Stationary, facing away from a far goal.
    let s = at(0, 0, Heading::West);
    let t = reward_terms(&s, &s, (40.0, 0.0), (40.0, 0.0), 1.0, &c);
    assert_eq!(t.clipped, c.delta);
    // d 10 -> 9 m facing the goal, with the goal radius shrunk so that d_t >= d_goal.
    let narrow = RewardConfig { d_goal: 5.0, ..c };
    let t = reward_terms(&at(0, 0, Heading::East), &at(1, 0, Heading::East), (10.0, 0.0), (10.0, 0.0), 1.0, &narrow);
    assert!((t.raw - 1.49).abs() < 1e-12);
    assert_eq!(t.clipped, t.raw);
    // Same move under the defaults: d_t = 9 < d_goal = 10 adds the bonus.
    let t = reward_terms(&at(0, 0, Heading::East), &at(1, 0, Heading::East), (10.0, 0.0), (10.0, 0.0), 1.0, &c);
    assert!((t.raw - 11.49).abs() < 1e-12);
    assert_eq!(t.clipped, 5.0);
    let d = wrapped_angle_diff(350f64.to_radians(), 10f64.to_radians());
    assert!((d - 20f64.to_radians()).abs() < 1e-12);
}

#[test]
fn reward_config_validation() {
    let c = RewardConfig::default();
    assert!(c.validate().is_ok());
    for bad in [RewardConfig { r_min: 5.0, ..c }, RewardConfig { d_goal: 0.0, ..c }, RewardConfig { delta: 0.1, ..c }, RewardConfig { beta: -1.0, ..c }] {
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
    }
}

#[test]
fn wrapped_angle_is_symmetric_on_a_grid() {
    for i in 0..360 {
        for j in (0..360).step_by(7) {
            let (a, b) = ((i as f64).to_radians(), (j as f64).to_radians());
            let (d1, d2) = (wrapped_angle_diff(a, b), wrapped_angle_diff(b, a));
            assert_eq!(d1, d2);
            assert!((0.0..=PI).contains(&d1));
        }
    }
}

#[test]
fn discounted_return_examples() {
    assert_eq!(discounted_return(&[1.0, 1.0, 1.0], 0.0), vec![1.0, 1.0, 1.0]);
    assert_eq!(discounted_return(&[0.0, 0.0, 1.0], 0.5), vec![0.25, 0.5, 1.0]);
    let g = discounted_return(&[1.0; 1000], 0.9);
    assert!((g[0] - (1.0 - 0.9f64.powi(1000)) / 0.1).abs() < 1e-6);
}

/// Random rollout of several episodes, the last one truncated.
fn random_rollout(rng: &mut crate::rng::Rng, episodes: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<bool>, Vec<bool>) {
    let (mut r, mut v, mut nv, mut d, mut e) = (vec![], vec![], vec![], vec![], vec![]);
    for ep in 0..episodes {
        let len = rng.gen_range(1..30);
        let truncated = ep + 1 == episodes;
        let vals: Vec<f64> = (0..=len).map(|_| rng.gen_range(-3.0..3.0)).collect();
        for t in 0..len {
            r.push(rng.gen_range(-5.0..5.0));
            v.push(vals[t]);
            let last = t + 1 == len;
            nv.push(vals[t + 1]);
            d.push(last && !truncated);
            e.push(last);
        }
    }
    (r, v, nv, d, e)
}

#[test]
fn gae_collapses() {
    let (adv, tgt) = compute_gae(&GaeInput { rewards: &[2.5], values: &[0.0], next_values: &[0.0], dones: &[true], episode_ends: &[true] }, 0.99, 0.95).unwrap();
    assert_eq!((adv[0], tgt[0]), (2.5, 2.5));
    let mut rng = substream(3, "test-gae0", 0);
    let (r, v, nv, d, e) = random_rollout(&mut rng, 5);
    let input = GaeInput { rewards: &r, values: &v, next_values: &nv, dones: &d, episode_ends: &e };
    let (adv, tgt) = compute_gae(&input, 0.9, 0.0).unwrap();
    for t in 0..r.len() {
        let delta = r[t] + if d[t] { 0.0 } else { 0.9 * nv[t] } - v[t];
        assert!((adv[t] - delta).abs() < 1e-12);
        assert!((tgt[t] - adv[t] - v[t]).abs() < 1e-12);
    }
    let bad = GaeInput { rewards: &r[1..], ..input.clone() };
    assert!(matches!(compute_gae(&bad, 0.9, 0.9), Err(Error::Contract(_))));
    let mut dones = d.clone();
    let mid = e.iter().position(|x| !x).unwrap();
    dones[mid] = true;
    assert!(matches!(compute_gae(&GaeInput { dones: &dones, ..input }, 0.9, 0.9), Err(Error::Contract(_))));
}

#[test]
fn gae_lambda_one_is_monte_carlo() {
    let gamma = 0.97;
    for seed in 0..100 {
        let mut rng = substream(seed, "test-gae1", 0);
        let len = rng.gen_range(1..60);
        let r: Vec<f64> = (0..len).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let v: Vec<f64> = (0..len).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let mut nv = v[1..].to_vec();
        nv.push(0.0);
        let mut ends = vec![false; len];
        ends[len - 1] = true;
        let (adv, _) = compute_gae(&GaeInput { rewards: &r, values: &v, next_values: &nv, dones: &ends, episode_ends: &ends }, gamma, 1.0).unwrap();
        let g = discounted_return(&r, gamma);
        for t in 0..len {
            assert!((adv[t] - (g[t] - v[t])).abs() < 1e-9);
        }
    }
}

#[test]
fn advantage_normalization() {
    let mut a = vec![1.0, 2.0, 3.0, 4.0];
    normalize_advantages(&mut a);
    let m = a.iter().sum::<f64>() / 4.0;
    let var = a.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 4.0;
    assert!(m.abs() < 1e-12 && (var - 1.0).abs() < 1e-6);
    let mut c = vec![2.0; 3];
    normalize_advantages(&mut c);
    assert_eq!(c, vec![0.0; 3]);
}

#[test]
fn ppo_clip_examples() {
    assert_eq!(ppo_clip_objective(0.0, 0.0, 1.0, 0.2), 1.0);
    assert!((ppo_clip_objective(2f64.ln(), 0.0, 1.0, 0.2) - 1.2).abs() < 1e-12);
    assert!((ppo_clip_objective(0.5f64.ln(), 0.0, -1.0, 0.2) + 0.8).abs() < 1e-12);
}

#[test]
fn ppo_clip_gradient_vanishes_when_clip_binds() {
    let lp_old = [0.0, 0.0, 0.0, 0.0];
    let adv = [1.0, -1.0, 1.0, -1.0];
    // Ratios 2 (A>0, clipped), 0.5 (A<0, clipped), 1.1 and 0.9 (unclipped).
    let lp_new = Tensor::vector(vec![2f64.ln(), 0.5f64.ln(), 1.1f64.ln(), 0.9f64.ln()]);
    let mut g = Graph::new();
    let x = g.constant(lp_new);
    let obj = ppo_clip_graph(&mut g, x, &lp_old, &adv, 0.2).unwrap();
    let s = g.sum(obj).unwrap();
    let grads = g.backward(s).unwrap();
    let gx = grads.wrt(x).unwrap();
    assert_eq!(gx[0], 0.0);
    assert_eq!(gx[1], 0.0);
    assert!((gx[2] - 1.1).abs() < 1e-12);
    assert!((gx[3] + 0.9).abs() < 1e-12);
}

#[test]
fn loss_examples() {
    assert_eq!(il_loss(&[(0.3, 0.4)], &[(0.3, 0.4)], &[0.5], &[0.5]), 0.0);
    assert!((il_loss(&[(0.1, 0.0)], &[(0.0, 0.0)], &[0.5], &[0.5]) - 0.005).abs() < 1e-15);
    assert!((il_loss(&[(0.1, 0.0), (0.0, 0.0)], &[(0.0, 0.0), (0.0, 0.0)], &[0.5, 0.2], &[0.5, 0.2]) - 0.0025).abs() < 1e-15);
    assert_eq!(value_loss(&[1.0], &[1.0]), 0.0);
    assert_eq!(value_loss(&[2.0], &[0.0]), 4.0);
    let mut g = Graph::new();
    let p = g.constant(Tensor::vector(vec![2.0, -1.0, 0.5]));
    let l = g.mse(p, Tensor::vector(vec![0.0, 1.0, 0.5])).unwrap();
    let grads = g.backward(l).unwrap();
    assert_eq!(grads.wrt(p).unwrap(), &[2.0 * 2.0 / 3.0, 2.0 * -2.0 / 3.0, 0.0]);
    assert_eq!(total_loss(1.0, 0.5, 2.0, 0.2, false).unwrap(), 1.0);
    assert!((total_loss(1.0, 0.5, 2.0, 0.2, true).unwrap() - 1.9).abs() < 1e-15);
    assert_eq!(total_loss(1.0, 0.5, 2.0, 0.0, true).unwrap(), 1.5);
    let err = total_loss(1.0, 0.5, 2.0, 1.5, true).unwrap_err();
    assert!(matches!(err, Error::Config(_)) && err.to_string().contains("λ_RL ∈ [0,1]"), "{err}");
    let r = LossReport { l_il: 1.0, l_v: 0.5, l_rl: 2.0, l_total: 1.9, ..LossReport::default() };
    assert!(r.is_consistent(0.2, true));
    assert!(!r.is_consistent(0.3, true));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn reward_stays_in_clip_bounds(x0 in 0i32..32, y0 in 0i32..32, x1 in 0i32..32, y1 in 0i32..32, h in 0usize..4, gx in 0i32..32, gy in 0i32..32, cell in 1.0f64..20.0) {
        let c = RewardConfig::default();
        let (p, s) = (at(x0, y0, Heading::ALL[h]), at(x1, y1, Heading::ALL[(h + 1) % 4]));
        let g = (gx as f64, gy as f64);
        let t = reward_terms(&p, &s, g, g, cell, &c);
        prop_assert!(t.clipped >= c.r_min && t.clipped <= c.r_max);
        prop_assert!(t.heading >= 0.0 && t.heading <= c.beta);
        let dd = ((x0 as f64 - g.0).hypot(y0 as f64 - g.1) - (x1 as f64 - g.0).hypot(y1 as f64 - g.1)) * cell;
        prop_assert_eq!(t.distance.partial_cmp(&0.0), (c.alpha * dd).partial_cmp(&0.0));
    }

    #[test]
    fn clipped_objective_is_pessimistic(lp in -3.0f64..3.0, a in -5.0f64..5.0, eps in 0.01f64..0.5) {
        prop_assert!(ppo_clip_objective(lp, 0.0, a, eps) <= lp.exp() * a + 1e-12);
    }

    #[test]
    fn total_loss_is_linear_in_rl_term(il in -5.0f64..5.0, v in 0.0f64..5.0, rl in -5.0f64..5.0, lam in 0.0f64..=1.0) {
        let base = total_loss(il, v, 0.0, lam, true).unwrap();
        let t = total_loss(il, v, rl, lam, true).unwrap();
        prop_assert!((t - base - lam * rl).abs() < 1e-12);
    }
}

#[test]
fn corridor_ppo_solves_three_seeds() {
    let cfg = CorridorConfig::default();
    for seed in 0..3 {
        let r = train_corridor(&cfg, seed).unwrap();
        let solved = r.solved_at.unwrap_or_else(|| panic!("seed {seed} did not reach the probe target"));
        assert!(solved <= cfg.max_env_steps);
        assert!((r.updates[0].first_mean_ratio - 1.0).abs() < 1e-6);
        assert!(corridor_probe(&r.policy, &cfg).unwrap() >= cfg.target_sr);
    }
    assert_eq!(corridor_pairs(4), vec![(0, 1), (0, 2), (1, 2)]);
}

struct Fixture {
    worlds: Vec<CityWorld>,
    demos: Vec<Demonstration>,
    pool: Vec<EpisodeSpec>,
    prior: PriorConfig,
}

fn fixture() -> Fixture {
    let worlds = vec![generate_world(21, &WorldConfig::desk()).unwrap()];
    let prior = PriorConfig { radius: 8.0, ..PriorConfig::default() };
    let demo = DemoConfig { prior, ..DemoConfig::default() };
    let corpus = build_dataset(&worlds, &DatasetConfig { episodes: 3, tiers: vec![Difficulty::Easy], episode: EpisodeConfig::desk(), demo }, 2).unwrap();
    let pool = (0..3).map(|j| sample_episode(&worlds[0], Difficulty::Easy, &EpisodeConfig::desk(), &mut substream(9, "test-pool", j), &format!("p{j}")).unwrap()).collect();
    Fixture { worlds, demos: corpus.demos, pool, prior }
}

fn tiny_policy(world: &CityWorld, seed: u64) -> Policy {
    let dims = EnvDims { width: world.width, height: world.height, z_max: world.z_max, patch: world.patch_size() };
    let mut cfg = PolicyConfig::new(dims);
    cfg.encoder = EncoderConfig { c0: 4, stages: 1, d: 8 };
    cfg.hidden = 16;
    cfg.actor_hidden = 16;
    Policy::new(cfg, seed).unwrap()
}

fn stage1_cfg(epochs: usize) -> Stage1Config {
    Stage1Config { epochs, batch_size: 16, optimizer: AdamConfig { lr: 3e-3, ..AdamConfig::default() }, ..Stage1Config::default() }
}

#[test]
fn stage1_contract() {
    let f = fixture();
    let p = tiny_policy(&f.worlds[0], 0);
    let before = p.fingerprint();
    let r = train_stage1(p.clone(), &f.demos, &f.worlds, &stage1_cfg(0)).unwrap();
    assert_eq!(r.policy.fingerprint(), before);
    assert!(r.curve.is_empty());
    assert!(matches!(train_stage1(p.clone(), &[], &f.worlds, &stage1_cfg(1)), Err(Error::Contract(_))));
    assert!(matches!(train_stage1(p.clone(), &f.demos, &f.worlds, &Stage1Config { batch_size: 0, ..stage1_cfg(1) }), Err(Error::Config(_))));
    let a = train_stage1(p.clone(), &f.demos, &f.worlds, &stage1_cfg(3)).unwrap();
    let b = train_stage1(p, &f.demos, &f.worlds, &stage1_cfg(3)).unwrap();
    assert_eq!(a.policy.fingerprint(), b.policy.fingerprint());
    assert_eq!(a.curve, b.curve);
    assert_eq!(a.curve.len(), 3);
    assert!(a.aborted.is_none());
    for e in &a.curve {
        assert!((e.total - (e.l_il + e.l_v + e.l_bc + e.l_wp)).abs() < 1e-9);
    }
    assert!(a.curve[2].l_il < a.curve[0].l_il);
}

#[test]
fn value_label_stats_match_a_direct_computation() {
    let f = fixture();
    let vals: Vec<f64> = f.demos.iter().flat_map(|d| d.steps.iter().map(|s| s.value)).collect();
    let n = vals.len() as f64;
    let m = vals.iter().sum::<f64>() / n;
    let sd = (vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt();
    let (mean, std) = value_label_stats(&f.demos);
    assert!((mean - m).abs() < 1e-9 && (std - sd).abs() < 1e-9);
}

fn ppo_cfg() -> PpoConfig {
    PpoConfig { rollout_steps: 24, minibatch_size: 12, expert_batch: 4, epochs_per_update: 2, max_updates: 2, probe_every: 2, ..PpoConfig::default() }
}

#[test]
fn stage2_first_ratio_and_warm_start() {
    let f = fixture();
    let s1 = train_stage1(tiny_policy(&f.worlds[0], 1), &f.demos, &f.worlds, &stage1_cfg(4)).unwrap().policy;
    let reward = RewardConfig::default();
    let data = Stage2Data { worlds: &f.worlds, pool: &f.pool, demos: &f.demos, probe: &f.pool[..1], reward: &reward, prior: &f.prior, stage1_lambda_bc: 1.0, stage1_lambda_wp: 1.0 };
    let cfg = ppo_cfg();
    let r = train_stage2(s1.clone(), &data, &cfg).unwrap();
    assert!(r.aborted.is_none(), "{:?}", r.aborted);
    assert!((r.first_mean_ratio.unwrap() - 1.0).abs() < 1e-6);
    assert_eq!(r.curve.len(), 2);
    assert!(r.curve[1].probe_sr.is_some() && r.curve[0].probe_sr.is_none());
    for u in &r.curve {
        assert!(u.losses.is_consistent(cfg.lambda_rl, true));
    }
    let csv = stage2_curve_csv(&r.curve);
    assert!(csv.starts_with(&STAGE2_CURVE_COLUMNS.join(",")));
    assert_eq!(csv.lines().count(), 3);

    let again = train_stage2(s1.clone(), &data, &cfg).unwrap();
    assert_eq!(again.policy.fingerprint(), r.policy.fingerprint());

    let (rollout, _) = collect_rollout(&s1, &f.worlds, &f.pool, &reward, &f.prior, &cfg, 0).unwrap();
    assert!(rollout.transitions.len() >= cfg.rollout_steps);
    assert!(rollout.transitions.iter().all(|t| t.log_prob.is_finite() && t.reward >= reward.r_min && t.reward <= reward.r_max));
    let warm = critic_value_loss(&s1, &rollout, &cfg).unwrap();
    let mut fresh = s1.clone();
    fresh.reset_value_head(5).unwrap();
    let cold = critic_value_loss(&fresh, &rollout, &cfg).unwrap();
    assert!(warm.is_finite() && cold.is_finite());
    assert_eq!(r.initial_value_loss, Some(warm));

    let bad = PpoConfig { lambda_rl: 1.5, ..cfg.clone() };
    let err = train_stage2(s1.clone(), &data, &bad).unwrap_err();
    assert!(err.to_string().contains("λ_RL ∈ [0,1]"));
    assert!(matches!(train_stage2(s1, &Stage2Data { demos: &[], ..data }, &cfg), Err(Error::Contract(_))));
}

#[test]
fn absorbing_stop_bootstraps_the_stop_reward() {
    let f = fixture();
    let p = tiny_policy(&f.worlds[0], 2);
    let reward = RewardConfig::default();
    let terminal = ppo_cfg();
    let absorbing = PpoConfig { stop_bootstrap: StopBootstrap::Absorbing, ..ppo_cfg() };
    let (rollout, _) = collect_rollout(&p, &f.worlds, &f.pool, &reward, &f.prior, &terminal, 0).unwrap();
    let (_, t1) = rollout_targets(&p, &rollout, &terminal).unwrap();
    let (_, t2) = rollout_targets(&p, &rollout, &absorbing).unwrap();
    let values = critic_values(&p, &rollout.transitions.iter().map(|t| &t.at).collect::<Vec<_>>()).unwrap();
    for (i, t) in rollout.transitions.iter().enumerate() {
        if t.stopped {
            // Stop is the last step of its episode, so the GAE sum has one term.
            let g = terminal.gamma;
            assert!((t1[i] - t.reward).abs() < 1e-9);
            assert!((t2[i] - (t.reward + g * t.reward / (1.0 - g))).abs() < 1e-9, "{} vs {}", t2[i], values[i]);
        }
    }
    let cut = PpoConfig { truncation_bootstrap: false, ..absorbing.clone() };
    let (_, t3) = rollout_targets(&p, &rollout, &cut).unwrap();
    for (i, t) in rollout.transitions.iter().enumerate() {
        if t.bootstrap.is_some() {
            assert!((t3[i] - t.reward).abs() < 1e-9);
        } else if t.stopped {
            assert_eq!(t3[i], t2[i]);
        }
    }
    for s in ["terminal", "absorbing"] {
        assert_eq!(s.parse::<StopBootstrap>().unwrap().to_string(), s);
    }
    assert!(matches!("never".parse::<StopBootstrap>(), Err(Error::Config(_))));
}
