use proptest::prelude::*;

use super::*;
use crate::error::Error;
use crate::mapper::{EncoderConfig, PriorConfig};
use crate::numerics::{softmax, BnPass, Graph, Tensor};
use crate::rng::substream;
use crate::teacher::{build_dataset, DatasetConfig, DemoConfig};
use crate::training::{sample_refs, supervised_batch, supervised_composite};
use crate::world::{
    generate_world, render_observation, sample_episode, Action, Band, CityWorld, Difficulty, EpisodeConfig, EpisodeSpec, GoalDescriptor, Heading, Sector, UavState, WorldConfig, NUM_ACTIONS,
};

fn world() -> CityWorld {
    generate_world(41, &WorldConfig::desk()).unwrap()
}

fn dims(w: &CityWorld) -> EnvDims {
    EnvDims { width: w.width, height: w.height, z_max: w.z_max, patch: w.patch_size() }
}

fn tiny(w: &CityWorld, seed: u64) -> Policy {
    let mut cfg = PolicyConfig::new(dims(w));
    cfg.encoder = EncoderConfig { c0: 4, stages: 1, d: 8 };
    cfg.hidden = 16;
    cfg.actor_hidden = 16;
    Policy::new(cfg, seed).unwrap()
}

fn episode(w: &CityWorld, tier: Difficulty, j: u64) -> EpisodeSpec {
    sample_episode(w, tier, &EpisodeConfig::desk(), &mut substream(3, "test-agent-episode", j), &format!("a{j}")).unwrap()
}

fn opts() -> EpisodeOptions {
    EpisodeOptions { prior: PriorConfig { radius: 8.0, ..PriorConfig::default() }, ..EpisodeOptions::default() }
}

fn desc(landmark_id: usize, sector: Sector) -> GoalDescriptor {
    GoalDescriptor { landmark_id, sector, band: Band::Near, tag: 0 }
}

#[test]
fn pose_features_example() {
    let d = EnvDims { width: 32, height: 32, z_max: 6, patch: 5 };
    let f = pose_features(&UavState::new(16, 16, 6, Heading::East), &d);
    assert_eq!(f, [0.5, 0.5, 1.0, 1.0, 0.0, 0.0, 0.0]);
    assert_eq!(f, pose_features(&UavState::new(16, 16, 6, Heading::East), &d));
}

#[test]
fn descriptor_embedding() {
    let w = world();
    let p = tiny(&w, 0);
    let mut g = Graph::new();
    let v = p.descriptor_feature(&mut g, &[desc(1, Sector::N), desc(1, Sector::N), desc(1, Sector::S)]).unwrap();
    let data = g.value(v).data().to_vec();
    let k = p.cfg.desc_dim;
    assert_eq!(data[..k], data[k..2 * k]);
    assert_ne!(data[..k], data[2 * k..]);
    let err = p.descriptor_feature(&mut g, &[desc(p.cfg.max_landmarks, Sector::N)]).unwrap_err();
    assert!(matches!(err, Error::Contract(_)));
}

#[test]
fn clamp_example() {
    let d = EnvDims { width: 96, height: 96, z_max: 6, patch: 5 };
    assert_eq!(clamp_to_grid((-0.1 * 96.0, 0.5 * 96.0), &d), (0.0, 48.0));
    assert_eq!(clamp_to_grid((200.0, -3.0), &d), (95.0, 0.0));
}

#[test]
fn replan_trigger_boundary() {
    let s = UavState::new(5, 5, 3, Heading::East);
    assert!(needs_replan(&ControllerState::default(), &s, 1.5));
    let at = ControllerState { k: 1, waypoint: Some((5.0, 5.0)), ..ControllerState::default() };
    assert!(needs_replan(&at, &s, 1.5));
    let far = ControllerState { k: 1, waypoint: Some((12.0, 5.0)), ..ControllerState::default() };
    assert!(!needs_replan(&far, &s, 1.5));
    let edge = ControllerState { k: 1, waypoint: Some((6.5, 5.0)), ..ControllerState::default() };
    assert!(!needs_replan(&edge, &s, 1.5));
}

#[test]
fn greedy_decoding_takes_the_argmax() {
    let mut rng = substream(0, "test", 0);
    let (a, lp) = choose_action(&[0.0, 0.0, 5.0, 0.0, 0.0, 0.0], DecodeMode::Greedy, &mut rng);
    assert_eq!(a, Action::Forward);
    assert!((lp - (5.0 - (5.0f64.exp() + 5.0).ln())).abs() < 1e-12);
    assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
}

proptest! {
    #[test]
    fn decisions_are_shift_invariant_and_valid(logits in prop::array::uniform6(-20.0f64..20.0), c in -50.0f64..50.0, seed in 0u64..1000) {
        let shifted: [f64; NUM_ACTIONS] = logits.map(|v| v + c);
        prop_assert_eq!(argmax(&logits), argmax(&shifted));
        let p = softmax(&logits);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12 && p.iter().all(|v| *v >= 0.0));
        let mut r1 = substream(seed, "test-sample", 0);
        let mut r2 = substream(seed, "test-sample", 0);
        let (a, lp) = choose_action(&logits, DecodeMode::Sample, &mut r1);
        let (b, lq) = choose_action(&shifted, DecodeMode::Sample, &mut r2);
        prop_assert!(Action::ALL.contains(&a));
        prop_assert!(lp.is_finite() && lp <= 0.0);
        prop_assert_eq!(a, b);
        prop_assert!((lp - lq).abs() < 1e-9);
    }
}

#[test]
fn ego_patch_faces_the_heading() {
    let w = world();
    let s = UavState::new(10, 10, 3, Heading::East);
    let obs = render_observation(&w, &s);
    assert_eq!(ego_patch(&obs.patch, Heading::East), obs.patch);
    let p = obs.size();
    let r = (p as i32 - 1) / 2;
    for h in Heading::ALL {
        let e = ego_patch(&obs.patch, h);
        let (dx, dy) = h.delta();
        for ch in 0..obs.patch.shape()[0] {
            let world_cell = obs.patch.data()[ch * p * p + ((dy + r) as usize) * p + (dx + r) as usize];
            let ahead = e.data()[ch * p * p + (r as usize) * p + (r + 1) as usize];
            assert_eq!(world_cell, ahead);
        }
    }
}

fn single_batch(p: &Policy, w: &CityWorld, e: &EpisodeSpec) -> PolicyBatch {
    let obs = render_observation(w, &e.start);
    let mut map = crate::mapper::init_map(w, e, &opts().prior).unwrap();
    crate::mapper::update_map(&mut map, &e.start, &obs);
    let patch = ego_patch(&obs.patch, e.start.heading);
    let n = obs.size();
    PolicyBatch {
        maps: Some(crate::mapper::MapEncoder::input_tensor(&[&map], &p.cfg.drop_channels)),
        obs: patch.reshape(&[1, obs.patch.shape()[0], n, n]).unwrap(),
        pose: Tensor::new(vec![1, POSE_FEATURES], pose_features(&e.start, &p.cfg.dims).to_vec()).unwrap(),
        descriptors: vec![e.descriptor],
        waypoint_context: Tensor::new(vec![1, WAYPOINT_CONTEXT], waypoint_context(&e.start, (3.0, 4.0), p.cfg.context_scale).to_vec()).unwrap(),
    }
}

#[test]
fn forward_is_deterministic_and_bounded() {
    let w = world();
    let p = tiny(&w, 2);
    let e = episode(&w, Difficulty::Medium, 0);
    let batch = single_batch(&p, &w, &e);
    let run = || {
        let mut g = Graph::new();
        let f = p.forward(&mut g, &batch, None, &mut BnPass::Infer).unwrap();
        p.decode(&g, &f.heads, f.logits, 0)
    };
    let a = run();
    assert_eq!(a, run());
    assert!((0.0..=1.0).contains(&a.progress));
    assert!(a.logits.iter().all(|v| v.is_finite()));
    assert!(a.goal.0.is_finite() && a.waypoint.1.is_finite());
}

#[test]
fn every_head_gets_gradient_from_the_supervised_composite() {
    let w = world();
    let prior = opts().prior;
    let corpus =
        build_dataset(std::slice::from_ref(&w), &DatasetConfig { episodes: 2, tiers: vec![Difficulty::Easy], episode: EpisodeConfig::desk(), demo: DemoConfig { prior, ..DemoConfig::default() } }, 4)
            .unwrap();
    let p = tiny(&w, 5);
    let refs = sample_refs(&corpus.demos);
    let batch = supervised_batch(&p, &corpus.demos, std::slice::from_ref(&w), &refs, None).unwrap();
    let mut g = Graph::new();
    let c = supervised_composite(&mut g, &p, &batch, 1.0, 1.0, &mut BnPass::train()).unwrap();
    let grads = g.backward(c.total).unwrap().param_grads(&p.store);
    for (name, ids) in p.head_param_ids() {
        assert!(ids.iter().any(|id| grads.nonzero(*id)), "head {name} has no gradient");
    }
    assert!(p.state_encoder_ids().iter().any(|id| grads.nonzero(*id)));
    assert!(p.descriptor_table_ids().iter().all(|id| grads.nonzero(*id)));
    assert!(p.map_param_ids().iter().any(|id| grads.nonzero(*id)));

    // The value loss alone reaches the state encoder.
    let mut g = Graph::new();
    let c = supervised_composite(&mut g, &p, &batch, 0.0, 0.0, &mut BnPass::train()).unwrap();
    let grads = g.backward(c.l_v).unwrap().param_grads(&p.store);
    assert!(p.state_encoder_ids().iter().any(|id| grads.nonzero(*id)));
}

#[test]
fn always_stop_gives_a_one_step_trajectory() {
    let w = world();
    let e = episode(&w, Difficulty::Easy, 1);
    let t = run_episode(&mut ScriptedAgent::new(vec![]), &w, &e, &opts(), &mut substream(0, "x", 0)).unwrap();
    assert_eq!(t.steps.len(), 1);
    assert_eq!(t.final_state, e.start);
    assert!(t.stopped && !t.truncated);
}

#[test]
fn teacher_playback_reaches_the_goal() {
    let w = world();
    for j in 0..6 {
        let e = episode(&w, Difficulty::ALL[j as usize % 3], j);
        let t = run_episode(&mut TeacherAgent::new(1.5), &w, &e, &opts(), &mut substream(0, "x", j)).unwrap();
        assert!(t.stopped);
        assert_eq!((t.final_state.x, t.final_state.y), e.goal);
        let ks: Vec<usize> = t.steps.iter().map(|s| s.decision.k).collect();
        assert!(ks.windows(2).all(|p| p[1] >= p[0]));
    }
}

#[test]
fn run_episode_rejects_an_invalid_episode() {
    let w = world();
    let mut e = episode(&w, Difficulty::Easy, 2);
    e.goal = (-1, 0);
    assert!(matches!(run_episode(&mut RandomAgent, &w, &e, &opts(), &mut substream(0, "x", 0)), Err(Error::Contract(_))));
}

#[test]
fn model_rollouts_are_reproducible_and_replan_only_on_arrival() {
    let w = world();
    let p = tiny(&w, 7);
    for j in 0..4 {
        let e = episode(&w, Difficulty::Hard, 10 + j);
        let run = |mode| {
            let mut a = ModelAgent::new(&p, mode);
            run_episode(&mut a, &w, &e, &opts(), &mut substream(11, "test-rollout", j)).unwrap()
        };
        let t = run(DecodeMode::Sample);
        assert_eq!(t, run(DecodeMode::Sample));
        assert_eq!(run(DecodeMode::Greedy), run(DecodeMode::Greedy));
        assert!(t.steps.len() <= e.max_steps);
        assert_eq!(t.stopped, t.steps.last().unwrap().decision.action == Action::Stop);
        assert_eq!(t.truncated, !t.stopped);
        let mut prev: Option<&StepRecord> = None;
        for s in &t.steps {
            let fired = match prev {
                None => true,
                Some(q) => {
                    let wp = q.decision.waypoint.unwrap();
                    let (x, y) = s.state.pos();
                    ((x - wp.0).powi(2) + (y - wp.1).powi(2)).sqrt() < p.cfg.eps_wp
                }
            };
            let k_before = prev.map_or(0, |q| q.decision.k);
            assert_eq!(s.decision.k, k_before + usize::from(fired));
            let (x, y) = s.decision.waypoint.unwrap();
            assert!((0.0..=(w.width - 1) as f64).contains(&x) && (0.0..=(w.height - 1) as f64).contains(&y));
            prev = Some(s);
        }
    }
}

#[test]
fn trajectory_log_round_trips() {
    let w = world();
    let p = tiny(&w, 8);
    let e = episode(&w, Difficulty::Easy, 20);
    let t = run_episode(&mut ModelAgent::new(&p, DecodeMode::Sample), &w, &e, &opts(), &mut substream(0, "log", 0)).unwrap();
    let rows = t.log_rows(e.goal, w.cell_size);
    assert_eq!(rows.len(), t.steps.len() + 1);
    assert!(rows.last().unwrap().action.is_none());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("traj.csv");
    write_log(&path, &rows, None).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().next().unwrap(), LOG_COLUMNS.join(","));
    let (back, labels) = read_log(&path).unwrap();
    assert_eq!(back, rows);
    assert!(labels.is_none());
    std::fs::write(&path, text.replacen("t,x", "t,q", 1)).unwrap();
    assert!(matches!(read_log(&path), Err(Error::Format { .. })));
}

#[test]
fn checkpoints_restore_the_model() {
    let w = world();
    let mut p = tiny(&w, 9);
    p.set_value_normalization(-3.5, 2.25).unwrap();
    let text = p.to_checkpoint(Default::default(), None).to_text();
    let q = Policy::from_checkpoint(&crate::numerics::Checkpoint::parse(&text).unwrap()).unwrap();
    assert_eq!(q.fingerprint(), p.fingerprint());
    assert_eq!(q.cfg, p.cfg);
    let mut other = p.cfg.clone();
    other.hidden = 8;
    let r = Policy::new(other, 0).unwrap().to_checkpoint(Default::default(), None);
    let mut ck = crate::numerics::Checkpoint::parse(&text).unwrap();
    ck.params = r.params;
    assert!(matches!(Policy::from_checkpoint(&ck), Err(Error::Contract(_))));
    assert!(p.set_value_normalization(0.0, 0.0).is_err());
}
