use std::collections::{BTreeMap, VecDeque};

use procbench::envcore::{
    ca_generate, place_entities, valid_entity_cells, Cell, EnvError, EnvRegistry, LevelLayout, LevelSeed, Pos,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Independent BFS over non-wall, non-hazard cells. Returns the action
/// sequence (1 up, 2 down, 3 left, 4 right) from `from` to `to`.
fn bfs_path(layout: &LevelLayout, from: Pos, to: Pos) -> Option<Vec<u32>> {
    let (w, h) = (layout.width, layout.height);
    let mut prev: Vec<Option<(usize, u32)>> = vec![None; w * h];
    let mut seen = vec![false; w * h];
    let mut queue = VecDeque::from([from]);
    seen[from.0 * w + from.1] = true;
    while let Some((r, c)) = queue.pop_front() {
        if (r, c) == to {
            let mut actions = Vec::new();
            let mut at = r * w + c;
            while let Some((p, a)) = prev[at] {
                actions.push(a);
                at = p;
            }
            actions.reverse();
            return Some(actions);
        }
        let moves = [(1u32, -1i64, 0i64), (2, 1, 0), (3, 0, -1), (4, 0, 1)];
        for (a, dr, dc) in moves {
            let (nr, nc) = (r as i64 + dr, c as i64 + dc);
            if nr < 0 || nc < 0 || nr >= h as i64 || nc >= w as i64 {
                continue;
            }
            let (nr, nc) = (nr as usize, nc as usize);
            let cell = layout.grid[nr * w + nc];
            if seen[nr * w + nc] || matches!(cell, Cell::Wall | Cell::Hazard) {
                continue;
            }
            seen[nr * w + nc] = true;
            prev[nr * w + nc] = Some((r * w + c, a));
            queue.push_back((nr, nc));
        }
    }
    None
}

#[test]
fn generated_cave_is_connected_by_independent_flood_fill() {
    let layout = ca_generate(15, 15, 0.45, 3, LevelSeed(123)).unwrap();
    let start = layout.start().unwrap();
    let goals: Vec<Pos> = (0..layout.height)
        .flat_map(|r| (0..layout.width).map(move |c| (r, c)))
        .filter(|&p| layout.grid[p.0 * layout.width + p.1] == Cell::Goal)
        .collect();
    assert!(!goals.is_empty());
    for goal in goals {
        assert!(bfs_path(&layout, start, goal).is_some(), "goal {goal:?} unreachable");
    }
    for r in 0..15 {
        for c in 0..15 {
            if r == 0 || c == 0 || r == 14 || c == 14 {
                assert_eq!(layout.grid[r * 15 + c], Cell::Wall);
            }
        }
    }
}

#[test]
fn many_generated_layouts_are_connected() {
    for seed in 0..300u32 {
        let layout = ca_generate(13, 11, 0.45, 3, LevelSeed(seed)).unwrap();
        let start = layout.start().unwrap();
        let goal = (0..layout.grid.len()).find(|&i| layout.grid[i] == Cell::Goal).unwrap();
        let goal = (goal / layout.width, goal % layout.width);
        assert!(bfs_path(&layout, start, goal).is_some(), "seed {seed}");
        assert_eq!(layout.grid.iter().filter(|&&c| c == Cell::Start).count(), 1);
    }
}

#[test]
fn shortest_path_on_open_gridmaze_earns_r_max() {
    let mut spec = EnvRegistry::builtin().get("gridmaze").unwrap().clone();
    spec.env_id = "gridmaze-open".into();
    spec.gen.width = 9;
    spec.gen.height = 9;
    spec.gen.fill_prob = 0.0;
    let mut envs = EnvRegistry::empty();
    envs.register(spec.clone()).unwrap();

    for seed in 0..20u32 {
        let mut env = envs.make_env("gridmaze-open", LevelSeed(seed)).unwrap();
        let layout = env.layout().clone();
        assert!(layout.grid.iter().enumerate().all(|(i, &c)| layout.is_border((i / 9, i % 9)) || c != Cell::Wall));
        let goal = layout.positions_of(Cell::Goal)[0];
        let path = bfs_path(&layout, env.agent_position(), goal).unwrap();
        let manhattan = env.agent_position().0.abs_diff(goal.0) + env.agent_position().1.abs_diff(goal.1);
        assert_eq!(path.len(), manhattan, "all-open level: BFS length is the Manhattan distance");
        let mut last = None;
        for a in path {
            last = Some(env.step(a).unwrap());
        }
        let last = last.unwrap();
        assert!(last.done);
        assert_eq!(env.episode_return(), spec.r_max);
        assert!(matches!(env.step(0), Err(EnvError::EpisodeFinished)));
    }
}

#[test]
fn same_seed_same_trajectory() {
    let envs = EnvRegistry::builtin();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let actions: Vec<u32> = (0..60).map(|_| rng.gen_range(0..5)).collect();
    let run = || {
        let mut env = envs.make_env("gridmaze", LevelSeed(0)).unwrap();
        let mut out = vec![serde_json::to_string(&env.observe()).unwrap()];
        for &a in &actions {
            let Ok(r) = env.step(a) else { break };
            out.push(serde_json::to_string(&r).unwrap());
        }
        out
    };
    assert_eq!(run(), run());
}

#[test]
fn different_seeds_give_different_layouts() {
    let envs = EnvRegistry::builtin();
    let mut collisions = 0;
    for i in 0..100u32 {
        let a = envs.make_env("gridmaze", LevelSeed(2 * i)).unwrap();
        let b = envs.make_env("gridmaze", LevelSeed(2 * i + 1)).unwrap();
        if a.layout() == b.layout() {
            collisions += 1;
        }
    }
    // Cave grids with randomly placed Start and Goal: a collision is
    // astronomically unlikely, so allow at most one.
    assert!(collisions <= 1, "{collisions} identical layouts out of 100 pairs");
    assert!(matches!(envs.make_env("nope", LevelSeed(0)), Err(EnvError::UnknownEnv(_))));
}

#[test]
fn random_policy_returns_stay_within_bounds() {
    let envs = EnvRegistry::builtin();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for spec in envs.specs() {
        let eps = 0.01 * (spec.r_max - spec.r_min);
        let mut sum = 0.0;
        for _ in 0..1000 {
            let mut env = envs.make_env(&spec.env_id, LevelSeed(rng.gen())).unwrap();
            loop {
                if env.step(rng.gen_range(0..5)).unwrap().done {
                    break;
                }
            }
            let ret = env.episode_return();
            assert!(
                ret >= spec.r_min - eps && ret <= spec.r_max + eps,
                "{}: return {ret} outside [{}, {}]",
                spec.env_id,
                spec.r_min,
                spec.r_max
            );
            sum += ret;
        }
        let mean = sum / 1000.0;
        assert!(mean > spec.r_min && mean < spec.r_max, "{}: degenerate mean {mean}", spec.env_id);
    }
}

#[test]
fn entity_placement_is_uniform_over_valid_cells() {
    let layout = ca_generate(11, 11, 0.45, 3, LevelSeed(2024)).unwrap();
    let valid = valid_entity_cells(&layout);
    assert!(valid.len() > 10);
    let mut counts: BTreeMap<Pos, u64> = valid.iter().map(|&p| (p, 0)).collect();
    let draws = 10_000u64;
    for i in 0..draws {
        let mut rng = ChaCha8Rng::seed_from_u64(i);
        let placed = place_entities(&layout, 1, &mut rng);
        *counts.get_mut(&placed[0]).expect("placement on a valid cell") += 1;
    }
    let expected = draws as f64 / valid.len() as f64;
    let stat: f64 = counts.values().map(|&o| (o as f64 - expected).powi(2) / expected).sum();
    let dof = (valid.len() - 1) as f64;
    let p_value = 1.0 - ChiSquared::new(dof).unwrap().cdf(stat);
    assert!(p_value > 0.001, "chi-square {stat:.2} with {dof} dof, p = {p_value:.5}");
}

#[test]
fn builtin_suite_shape() {
    let envs = EnvRegistry::builtin();
    let specs = envs.specs();
    assert_eq!(specs.len(), 8);
    let public = specs.iter().filter(|s| s.visibility == procbench::envcore::Visibility::Public).count();
    assert_eq!((public, specs.len() - public), (6, 2));
    let mut ids: Vec<&str> = specs.iter().map(|s| s.env_id.as_str()).collect();
    ids.sort();
    ids.dedup();
    assert_eq!(ids.len(), 8);
    assert!(specs.iter().all(|s| s.r_max > s.r_min && s.max_episode_steps >= 1));
}
