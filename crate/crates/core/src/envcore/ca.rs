//! Layout generation: cellular-automata caves and hazard corridors.

use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{Cell, EnvError, GenParams, LevelLayout, LevelSeed, Pos};
use crate::seeding::rng_from;

/// Regeneration attempts before giving up on a seed.
pub const MAX_GENERATION_ATTEMPTS: u32 = 16;

/// A cell turns to Wall when at least 5 of its 8 neighbours are Wall. Cells
/// next to the border see fewer interior neighbours; the same 5/8 fraction
/// applies to those.
const WALL_NUM: usize = 5;
const WALL_DEN: usize = 8;

/// Generates a cave layout with one Start and one reachable Goal.
///
/// The interior is seeded with walls at `fill_prob` and smoothed for
/// `iterations` rounds of the 5-of-8 rule. The fixed outer border is not
/// counted as a neighbour during smoothing, so an all-open interior stays
/// open. Start is drawn uniformly over open cells and Goal uniformly over
/// the other cells reachable from it; when Start sits in an isolated pocket
/// the grid is regenerated from fresh entropy, at most
/// [`MAX_GENERATION_ATTEMPTS`] times.
pub fn ca_generate(
    width: usize,
    height: usize,
    fill_prob: f64,
    iterations: u32,
    seed: LevelSeed,
) -> Result<LevelLayout, EnvError> {
    let params = GenParams { width, height, fill_prob, iterations };
    generate_cave(&params, &[b"ca", &seed.0.to_le_bytes()])
}

pub(crate) fn generate_cave(params: &GenParams, key: &[&[u8]]) -> Result<LevelLayout, EnvError> {
    check_params(params)?;
    for attempt in 0..MAX_GENERATION_ATTEMPTS {
        let mut rng = attempt_rng(key, attempt);
        let mut layout = random_fill(params, &mut rng);
        for _ in 0..params.iterations {
            layout = smooth(&layout);
        }
        if place_start_goal(&mut layout, &mut rng) {
            return Ok(layout);
        }
    }
    Err(EnvError::GenerationFailed { attempts: MAX_GENERATION_ATTEMPTS })
}

/// A straight open corridor with Start at the left end and Goal at the
/// right end; `hazards` cells are dropped uniformly on the interior as long
/// as the Goal stays reachable.
pub(crate) fn generate_corridor(params: &GenParams, hazards: usize, key: &[&[u8]]) -> Result<LevelLayout, EnvError> {
    check_params(params)?;
    for attempt in 0..MAX_GENERATION_ATTEMPTS {
        let mut rng = attempt_rng(key, attempt);
        let mut layout = LevelLayout::filled(params.width, params.height, Cell::Wall);
        for row in 1..params.height - 1 {
            for col in 1..params.width - 1 {
                layout.set((row, col), Cell::Open);
            }
        }
        let mid = params.height / 2;
        let start = (mid, 1);
        let goal = (mid, params.width - 2);
        layout.set(start, Cell::Start);
        layout.set(goal, Cell::Goal);

        let mut candidates = layout.positions_of(Cell::Open);
        candidates.shuffle(&mut rng);
        let mut placed = 0;
        for pos in candidates {
            if placed == hazards {
                break;
            }
            layout.set(pos, Cell::Hazard);
            if goal_reachable(&layout, start, goal) {
                placed += 1;
            } else {
                layout.set(pos, Cell::Open);
            }
        }
        if placed == hazards {
            return Ok(layout);
        }
    }
    Err(EnvError::GenerationFailed { attempts: MAX_GENERATION_ATTEMPTS })
}

fn check_params(params: &GenParams) -> Result<(), EnvError> {
    if params.width < 5 || params.height < 5 {
        return Err(EnvError::InvalidSpec("grid must be at least 5x5".into()));
    }
    if !(0.0..=1.0).contains(&params.fill_prob) {
        return Err(EnvError::InvalidSpec("fill_prob outside [0,1]".into()));
    }
    Ok(())
}

fn attempt_rng(key: &[&[u8]], attempt: u32) -> ChaCha8Rng {
    let attempt = attempt.to_le_bytes();
    let mut parts: Vec<&[u8]> = key.to_vec();
    parts.push(&attempt);
    rng_from(&parts)
}

fn random_fill(params: &GenParams, rng: &mut ChaCha8Rng) -> LevelLayout {
    let mut layout = LevelLayout::filled(params.width, params.height, Cell::Wall);
    for row in 1..params.height - 1 {
        for col in 1..params.width - 1 {
            let cell = if rng.gen_bool(params.fill_prob) { Cell::Wall } else { Cell::Open };
            layout.set((row, col), cell);
        }
    }
    layout
}

fn smooth(layout: &LevelLayout) -> LevelLayout {
    let mut next = layout.clone();
    for row in 1..layout.height - 1 {
        for col in 1..layout.width - 1 {
            let mut walls = 0;
            let mut counted = 0;
            for dr in -1i64..=1 {
                for dc in -1i64..=1 {
                    if dr == 0 && dc == 0 {
                        continue;
                    }
                    let pos = ((row as i64 + dr) as usize, (col as i64 + dc) as usize);
                    if layout.is_border(pos) {
                        continue;
                    }
                    counted += 1;
                    if layout.get(pos) == Cell::Wall {
                        walls += 1;
                    }
                }
            }
            let cell = if walls * WALL_DEN >= WALL_NUM * counted { Cell::Wall } else { Cell::Open };
            next.set((row, col), cell);
        }
    }
    next
}

fn place_start_goal(layout: &mut LevelLayout, rng: &mut ChaCha8Rng) -> bool {
    let open = layout.positions_of(Cell::Open);
    let Some(&start) = open.choose(rng) else {
        return false;
    };
    layout.set(start, Cell::Start);
    let reach = flood_fill(layout, start);
    let region: Vec<Pos> = open.iter().copied().filter(|&p| p != start && reach[p.0 * layout.width + p.1]).collect();
    match region.choose(rng) {
        Some(&goal) => {
            layout.set(goal, Cell::Goal);
            true
        }
        None => false,
    }
}

fn goal_reachable(layout: &LevelLayout, start: Pos, goal: Pos) -> bool {
    flood_fill(layout, start)[goal.0 * layout.width + goal.1]
}

/// 4-connected reachability from `from` through passable cells
/// (Open, Start, Goal). Returns a row-major mask.
pub fn flood_fill(layout: &LevelLayout, from: Pos) -> Vec<bool> {
    let mut seen = vec![false; layout.grid.len()];
    if !layout.get(from).is_passable() {
        return seen;
    }
    let mut queue = VecDeque::from([from]);
    seen[from.0 * layout.width + from.1] = true;
    while let Some((row, col)) = queue.pop_front() {
        let neighbours = [(row.wrapping_sub(1), col), (row + 1, col), (row, col.wrapping_sub(1)), (row, col + 1)];
        for (r, c) in neighbours {
            if r >= layout.height || c >= layout.width {
                continue;
            }
            let idx = r * layout.width + c;
            if !seen[idx] && layout.grid[idx].is_passable() {
                seen[idx] = true;
                queue.push_back((r, c));
            }
        }
    }
    seen
}

/// Open cells reachable from Start: the valid locations for entities.
pub fn valid_entity_cells(layout: &LevelLayout) -> Vec<Pos> {
    let Some(start) = layout.start() else {
        return Vec::new();
    };
    let reach = flood_fill(layout, start);
    layout.positions_of(Cell::Open).into_iter().filter(|p| reach[p.0 * layout.width + p.1]).collect()
}

/// Draws `count` distinct entity positions uniformly over the valid cells.
/// Returns fewer when the level has fewer valid cells.
pub fn place_entities<R: Rng + ?Sized>(layout: &LevelLayout, count: usize, rng: &mut R) -> Vec<Pos> {
    let cells = valid_entity_cells(layout);
    cells.choose_multiple(rng, count.min(cells.len())).copied().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_fill_gives_open_interior() {
        let layout = ca_generate(9, 9, 0.0, 3, LevelSeed(7)).unwrap();
        for row in 0..9 {
            for col in 0..9 {
                let cell = layout.get((row, col));
                if layout.is_border((row, col)) {
                    assert_eq!(cell, Cell::Wall);
                } else {
                    assert_ne!(cell, Cell::Wall, "interior wall at {row},{col}");
                    assert_ne!(cell, Cell::Hazard);
                }
            }
        }
        assert_eq!(layout.positions_of(Cell::Start).len(), 1);
        assert_eq!(layout.positions_of(Cell::Goal).len(), 1);
    }

    #[test]
    fn same_inputs_same_grid() {
        let a = ca_generate(9, 9, 0.45, 3, LevelSeed(42)).unwrap();
        let b = ca_generate(9, 9, 0.45, 3, LevelSeed(42)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn full_fill_fails() {
        let err = ca_generate(9, 9, 1.0, 3, LevelSeed(1)).unwrap_err();
        assert_eq!(err, EnvError::GenerationFailed { attempts: MAX_GENERATION_ATTEMPTS });
    }

    #[test]
    fn rejects_tiny_grid() {
        assert!(matches!(ca_generate(4, 9, 0.4, 3, LevelSeed(1)), Err(EnvError::InvalidSpec(_))));
    }

    #[test]
    fn corridor_keeps_goal_reachable() {
        let params = GenParams { width: 15, height: 5, fill_prob: 0.0, iterations: 0 };
        for seed in 0..50u32 {
            let layout = generate_corridor(&params, 4, &[b"corridor", &seed.to_le_bytes()]).unwrap();
            layout.check_invariants().unwrap();
            assert_eq!(layout.positions_of(Cell::Hazard).len(), 4);
        }
    }

    #[test]
    fn place_entities_stays_on_valid_cells() {
        let layout = ca_generate(15, 15, 0.45, 3, LevelSeed(3)).unwrap();
        let valid = valid_entity_cells(&layout);
        let mut rng = rng_from(&[b"t"]);
        let picked = place_entities(&layout, 5, &mut rng);
        assert_eq!(picked.len(), 5.min(valid.len()));
        for p in &picked {
            assert!(valid.contains(p));
        }
    }
}
