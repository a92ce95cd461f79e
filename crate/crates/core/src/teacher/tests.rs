use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};

use proptest::prelude::*;

use super::*;
use crate::error::Error;
use crate::mapper::PriorConfig;
use crate::rng::substream;
use crate::world::{generate_world, sample_episode, Action, CityWorld, Difficulty, EpisodeConfig, Heading, Landmark, UavState, WorldConfig};

fn flat_world(w: usize, h: usize, heights: Vec<i32>) -> CityWorld {
    let (x1, y1) = (w as i32 - 1, h as i32 - 1);
    let landmarks = vec![Landmark { id: 0, token: "a".into(), x: 0, y: y1, radius: 0 }, Landmark { id: 1, token: "b".into(), x: x1, y: y1, radius: 0 }];
    CityWorld::new("flat".into(), w, h, 5.0, (1, 6), 3, (2, 1), heights, landmarks).unwrap()
}

fn desk_world(seed: u64) -> CityWorld {
    generate_world(seed, &WorldConfig::desk()).unwrap()
}

/// Uniform-cost search over poses with integer costs (tenths), independent of the planner.
fn dijkstra_cost(world: &CityWorld, start: &UavState, goal: (i32, i32)) -> Option<f64> {
    let mut best: BTreeMap<(i32, i32, i32, usize), u64> = BTreeMap::new();
    let mut heap = BinaryHeap::new();
    let key = |s: &UavState| (s.x, s.y, s.z, s.heading.index());
    best.insert(key(start), 0);
    heap.push(Reverse((0u64, key(start))));
    while let Some(Reverse((c, k))) = heap.pop() {
        if best.get(&k).is_some_and(|&b| b < c) {
            continue;
        }
        if (k.0, k.1) == goal {
            return Some(c as f64 / 10.0);
        }
        let s = UavState::new(k.0, k.1, k.2, Heading::ALL[k.3]);
        for (a, cost) in [(Action::Forward, 10), (Action::TurnLeft, 1), (Action::TurnRight, 1), (Action::GoUp, 10), (Action::GoDown, 10)] {
            let out = world.step(&s, a).unwrap();
            if out.blocked {
                continue;
            }
            let nk = key(&out.next);
            let nc = c + cost;
            if best.get(&nk).map_or(true, |&b| nc < b) {
                best.insert(nk, nc);
                heap.push(Reverse((nc, nk)));
            }
        }
    }
    None
}

fn replay_ok(world: &CityWorld, path: &ExpertPath, goal: (i32, i32)) {
    assert_eq!(path.states.len(), path.actions.len());
    assert_eq!(*path.actions.last().unwrap(), Action::Stop);
    for i in 0..path.actions.len() - 1 {
        let out = world.step(&path.states[i], path.actions[i]).unwrap();
        assert!(!out.blocked, "step {i} blocked");
        assert_eq!(out.next, path.states[i + 1]);
    }
    let f = path.final_state();
    assert_eq!((f.x, f.y), goal);
    let turns = path.actions.iter().filter(|a| matches!(a, Action::TurnLeft | Action::TurnRight)).count();
    let moves = path.actions.iter().filter(|a| matches!(a, Action::Forward | Action::GoUp | Action::GoDown)).count();
    assert!((path.cost - (moves as f64 * MOVE_COST + turns as f64 * TURN_COST)).abs() < 1e-9);
    assert_eq!(path.remaining[0], moves as f64);
    assert!(path.remaining.windows(2).all(|w| w[0] >= w[1]));
}

#[test]
fn straight_line_on_flat_ground() {
    let w = flat_world(8, 8, vec![0; 64]);
    let start = UavState::new(0, 2, 3, Heading::East);
    let p = plan_path(&w, &start, (5, 2)).unwrap();
    assert_eq!(p.actions, [vec![Action::Forward; 5], vec![Action::Stop]].concat());
    assert_eq!(p.cost, 5.0);
    assert_eq!(p.horizontal_moves(), 5);
    assert_eq!(p.cells().len(), 6);
}

#[test]
fn goal_at_start_is_a_single_stop() {
    let w = flat_world(8, 8, vec![0; 64]);
    let start = UavState::new(4, 4, 3, Heading::North);
    let p = plan_path(&w, &start, (4, 4)).unwrap();
    assert_eq!(p.actions, vec![Action::Stop]);
    assert_eq!(p.cost, 0.0);
    assert_eq!(extract_waypoints(&p, &w, &WaypointConfig::default()), vec![(4, 4)]);
}

#[test]
fn wall_forces_a_detour_or_climb() {
    // A full-height wall at x = 3 except a gap at y = 7.
    let mut heights = vec![0; 64];
    for y in 0..7 {
        heights[y * 8 + 3] = 6;
    }
    let w = flat_world(8, 8, heights);
    let start = UavState::new(0, 0, 3, Heading::East);
    let p = plan_path(&w, &start, (6, 0)).unwrap();
    replay_ok(&w, &p, (6, 0));
    assert!(p.cells().contains(&(3, 7)));
    assert!((p.cost - dijkstra_cost(&w, &start, (6, 0)).unwrap()).abs() < 1e-9);
}

#[test]
fn enclosed_goal_is_infeasible() {
    let mut heights = vec![0; 64];
    for (x, y) in [(4, 3), (4, 5), (3, 4), (5, 4)] {
        heights[y * 8 + x] = 6;
    }
    let w = flat_world(8, 8, heights);
    let err = plan_path(&w, &UavState::new(0, 0, 3, Heading::East), (4, 4)).unwrap_err();
    assert!(matches!(err, Error::Infeasible(_)), "{err}");
    let err = plan_path(&w, &UavState::new(0, 0, 3, Heading::East), (9, 9)).unwrap_err();
    assert!(matches!(err, Error::Infeasible(_)));
    let err = plan_path(&w, &UavState::new(4, 3, 3, Heading::East), (0, 0)).unwrap_err();
    assert!(matches!(err, Error::Contract(_)));
}

#[test]
fn planner_matches_uniform_cost_search_on_generated_worlds() {
    let cfg = EpisodeConfig::desk();
    for seed in 0..3 {
        let w = desk_world(seed);
        for j in 0..4 {
            let mut rng = substream(seed, "test-plan", j);
            let e = sample_episode(&w, Difficulty::ALL[j as usize % 3], &cfg, &mut rng, "e").unwrap();
            let p = plan_path(&w, &e.start, e.goal).unwrap();
            replay_ok(&w, &p, e.goal);
            let oracle = dijkstra_cost(&w, &e.start, e.goal).unwrap();
            assert!((p.cost - oracle).abs() < 1e-9, "seed {seed} ep {j}: {} vs {oracle}", p.cost);
        }
    }
}

#[test]
fn corner_becomes_a_waypoint() {
    let w = flat_world(16, 16, vec![0; 256]);
    let states: Vec<UavState> = (0..=5).map(|x| UavState::new(x, 10, 3, Heading::East)).chain((11..=14).map(|y| UavState::new(5, y, 3, Heading::North))).collect();
    let mut actions = vec![Action::Forward; states.len() - 1];
    actions.push(Action::Stop);
    let remaining = vec![0.0; actions.len()];
    let p = ExpertPath { states, actions, remaining, cost: 0.0 };
    let wps = extract_waypoints(&p, &w, &WaypointConfig { s_max: 12.0, r_anchor: 0.0, dedupe: 2.0 });
    assert_eq!(wps, vec![(5, 10), (5, 14)]);
}

#[test]
fn long_straight_runs_get_intermediate_waypoints() {
    let w = flat_world(32, 4, vec![0; 128]);
    let p = plan_path(&w, &UavState::new(0, 0, 3, Heading::East), (30, 0)).unwrap();
    let wps = extract_waypoints(&p, &w, &WaypointConfig { s_max: 12.0, r_anchor: 0.0, dedupe: 2.0 });
    assert_eq!(wps, vec![(12, 0), (24, 0), (30, 0)]);
}

#[test]
fn landmark_near_the_path_anchors_a_waypoint() {
    let landmarks = vec![Landmark { id: 0, token: "a".into(), x: 8, y: 5, radius: 1 }, Landmark { id: 1, token: "b".into(), x: 19, y: 7, radius: 0 }];
    let w = CityWorld::new("lm".into(), 20, 8, 5.0, (1, 6), 3, (2, 1), vec![0; 160], landmarks).unwrap();
    let p = plan_path(&w, &UavState::new(0, 3, 3, Heading::East), (18, 3)).unwrap();
    let wps = extract_waypoints(&p, &w, &WaypointConfig { s_max: 30.0, r_anchor: 3.0, dedupe: 2.0 });
    assert_eq!(wps, vec![(8, 3), (18, 3)]);
}

#[test]
fn demonstration_labels() {
    let w = desk_world(4);
    let cfg = DemoConfig { prior: PriorConfig { radius: 8.0, ..PriorConfig::default() }, ..DemoConfig::default() };
    let mut rng = substream(4, "test-demo", 0);
    let e = sample_episode(&w, Difficulty::Medium, &EpisodeConfig::desk(), &mut rng, "d").unwrap();
    let d = build_demonstration(&w, &e, &cfg).unwrap();
    let n = d.steps.len();
    assert!(n >= 2);
    assert_eq!(d.steps[0].progress, 0.0);
    assert_eq!(d.steps[n - 1].progress, 1.0);
    assert!(d.steps.windows(2).all(|s| s[0].progress < s[1].progress));
    assert_eq!(d.steps[n - 1].action, Action::Stop);
    assert_eq!(*d.waypoints.last().unwrap(), e.goal);
    assert!(d.steps.windows(2).all(|s| s[0].waypoint_index <= s[1].waypoint_index));
    // Value labels: backward recursion V_t = r_t + gamma V_{t+1}.
    let mut v = 0.0;
    for s in d.steps.iter().rev() {
        v = s.reward + cfg.gamma * v;
        assert!((s.value - v).abs() < 1e-9);
    }
    assert!(d.steps.iter().all(|s| s.reward >= cfg.reward.r_min && s.reward <= cfg.reward.r_max));
    let (rows, labels) = d.log(&w);
    assert_eq!(rows.len(), n + 1);
    assert_eq!(labels.len(), n);
    assert_eq!(rows[n].distance_m, 0.0);

    let dist = build_demonstration(&w, &e, &DemoConfig { progress: ProgressLabel::DistanceFraction, ..cfg.clone() }).unwrap();
    assert_eq!(dist.steps[0].progress, 0.0);
    assert_eq!(dist.steps[n - 1].progress, 1.0);
    assert!(dist.steps.windows(2).all(|s| s[0].progress <= s[1].progress));
    assert!(build_demonstration(&w, &e, &DemoConfig { gamma: 1.0, ..cfg }).is_err());
}

#[test]
fn progress_label_names_round_trip() {
    for p in [ProgressLabel::StepFraction, ProgressLabel::DistanceFraction] {
        assert_eq!(p.to_string().parse::<ProgressLabel>().unwrap(), p);
    }
    assert!(matches!("steps".parse::<ProgressLabel>(), Err(Error::Config(_))));
}

fn small_dataset() -> (Vec<CityWorld>, DatasetConfig) {
    let worlds = vec![desk_world(11), desk_world(12)];
    let demo = DemoConfig { prior: PriorConfig { radius: 8.0, ..PriorConfig::default() }, ..DemoConfig::default() };
    (worlds, DatasetConfig { episodes: 7, tiers: Difficulty::ALL.to_vec(), episode: EpisodeConfig::desk(), demo })
}

#[test]
fn dataset_is_stratified_and_deterministic() {
    let (worlds, cfg) = small_dataset();
    let a = build_dataset(&worlds, &cfg, 3).unwrap();
    let b = build_dataset(&worlds, &cfg, 3).unwrap();
    assert_eq!(a.demos, b.demos);
    assert_eq!(a.manifest, b.manifest);
    assert_eq!(a.manifest.tier_counts, vec![(Difficulty::Easy, 3), (Difficulty::Medium, 2), (Difficulty::Hard, 2)]);
    for tier in Difficulty::ALL {
        let n = a.demos.iter().filter(|d| d.episode.difficulty == tier).count();
        assert_eq!(n, a.manifest.tier_counts.iter().find(|t| t.0 == tier).unwrap().1);
    }
    let c = build_dataset(&worlds, &cfg, 4).unwrap();
    assert_ne!(a.manifest.order, c.manifest.order);
    assert!(matches!(build_dataset(&[], &cfg, 0), Err(Error::Config(_))));
}

#[test]
fn corpus_round_trips_through_disk() {
    let (worlds, cfg) = small_dataset();
    let corpus = build_dataset(&worlds, &cfg, 5).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let files = save_corpus(dir.path(), &corpus, &worlds).unwrap();
    assert!(files.iter().all(|f| f.exists()));
    let text = std::fs::read_to_string(dir.path().join("manifest.txt")).unwrap();
    assert_eq!(CorpusManifest::parse(&text, dir.path()).unwrap(), corpus.manifest);
    let back = load_corpus(dir.path(), &worlds, &cfg.demo).unwrap();
    assert_eq!(back.demos, corpus.demos);

    let rec = dir.path().join("records").join(format!("{}.csv", corpus.demos[0].episode.id));
    let mut bytes = std::fs::read(&rec).unwrap();
    let last = bytes.len() - 2;
    bytes[last] = if bytes[last] == b'1' { b'2' } else { b'1' };
    std::fs::write(&rec, bytes).unwrap();
    assert!(matches!(load_corpus(dir.path(), &worlds, &cfg.demo), Err(Error::Consistency(_))));

    let empty = tempfile::tempdir().unwrap();
    assert!(matches!(load_corpus(empty.path(), &worlds, &cfg.demo), Err(Error::MissingPrerequisite(_))));
    assert!(matches!(load_corpus(dir.path(), &worlds[..1], &cfg.demo), Err(Error::MissingPrerequisite(_)) | Err(Error::Consistency(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn expert_paths_replay_and_are_optimal(seed in 0u64..6, j in 0u64..50) {
        let w = desk_world(seed);
        let mut rng = substream(seed, "prop-plan", j);
        let e = sample_episode(&w, Difficulty::ALL[(j % 3) as usize], &EpisodeConfig::desk(), &mut rng, "p").unwrap();
        let p = plan_path(&w, &e.start, e.goal).unwrap();
        replay_ok(&w, &p, e.goal);
        prop_assert!((p.cost - dijkstra_cost(&w, &e.start, e.goal).unwrap()).abs() < 1e-9);
        let cfg = WaypointConfig::default();
        let wps = extract_waypoints(&p, &w, &cfg);
        prop_assert_eq!(*wps.last().unwrap(), e.goal);
        let cells = p.cells();
        let mut prev = cells[0];
        let mut at = 0;
        for wp in &wps {
            let idx = cells[at..].iter().position(|c| c == wp).map(|i| i + at);
            prop_assert!(idx.is_some(), "waypoint {:?} off path or out of order", wp);
            at = idx.unwrap();
            let gap = (((wp.0 - prev.0).pow(2) + (wp.1 - prev.1).pow(2)) as f64).sqrt();
            prop_assert!(gap <= cfg.s_max + 1e-9);
            prev = *wp;
        }
    }
}
