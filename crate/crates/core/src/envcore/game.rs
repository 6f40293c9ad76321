use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::ca::{flood_fill, generate_cave, generate_corridor, place_entities, valid_entity_cells};
use super::suite::{GameRules, LayoutKind};
use super::{Action, Cell, EnvError, EnvSpec, LevelLayout, LevelSeed, Observation, Pos, StepResult};
use crate::seeding::rng_from;

/// Actions: 0 no-op, 1 up, 2 down, 3 left, 4 right.
pub const NUM_ACTIONS: u32 = 5;

const AGENT_CODE: i32 = 5;
const COIN_CODE: i32 = 6;
const ENEMY_CODE: i32 = 7;
const TAIL_CODE: i32 = 8;

/// One live environment instance. Single-threaded; sessions share nothing.
#[derive(Debug, Clone)]
pub struct EnvSession {
    spec: EnvSpec,
    rules: GameRules,
    seed: LevelSeed,
    layout: LevelLayout,
    grid: LevelLayout,
    agent: Pos,
    coins: Vec<Pos>,
    enemies: Vec<Pos>,
    tail: VecDeque<Pos>,
    rng: ChaCha8Rng,
    steps: u32,
    episode_return: f64,
    done: bool,
}

struct Level {
    layout: LevelLayout,
    coins: Vec<Pos>,
    enemies: Vec<Pos>,
}

fn generate_level(spec: &EnvSpec, rules: &GameRules, seed: LevelSeed) -> Result<Level, EnvError> {
    let seed_bytes = seed.0.to_le_bytes();
    let key: [&[u8]; 3] = [b"level", spec.env_id.as_bytes(), &seed_bytes];
    let mut layout = match rules.layout {
        LayoutKind::Cave => generate_cave(&spec.gen, &key)?,
        LayoutKind::Corridor => generate_corridor(&spec.gen, rules.hazards, &key)?,
    };
    let mut rng = rng_from(&[b"entities", spec.env_id.as_bytes(), &seed_bytes]);

    if rules.layout == LayoutKind::Cave && rules.hazards > 0 {
        let start = layout.start().expect("generated layout has a start");
        let goal = layout.positions_of(Cell::Goal)[0];
        let mut candidates = valid_entity_cells(&layout);
        candidates.shuffle(&mut rng);
        let mut placed = 0;
        for pos in candidates {
            if placed == rules.hazards {
                break;
            }
            layout.set(pos, Cell::Hazard);
            if flood_fill(&layout, start)[goal.0 * layout.width + goal.1] {
                placed += 1;
            } else {
                layout.set(pos, Cell::Open);
            }
        }
    }

    let mut entities = place_entities(&layout, rules.coins + rules.enemies, &mut rng);
    let enemies = entities.split_off(rules.coins.min(entities.len()));
    layout.entity_positions = entities.iter().chain(enemies.iter()).copied().collect();
    Ok(Level { layout, coins: entities, enemies })
}

impl EnvSession {
    pub fn new(spec: &EnvSpec, seed: LevelSeed) -> Result<Self, EnvError> {
        spec.validate()?;
        let rules = spec.kind.rules();
        let level = generate_level(spec, &rules, seed)?;
        let agent = level.layout.start().expect("generated layout has a start");
        Ok(EnvSession {
            spec: spec.clone(),
            rules,
            seed,
            grid: level.layout.clone(),
            layout: level.layout,
            agent,
            coins: level.coins,
            enemies: level.enemies,
            tail: VecDeque::new(),
            rng: dynamics_rng(spec, seed),
            steps: 0,
            episode_return: 0.0,
            done: false,
        })
    }

    /// Starts a new episode on the level identified by `seed`.
    pub fn reset(&mut self, seed: LevelSeed) -> Result<Observation, EnvError> {
        *self = EnvSession::new(&self.spec, seed)?;
        Ok(self.observe())
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn seed(&self) -> LevelSeed {
        self.seed
    }

    /// The level as generated, before any episode dynamics.
    pub fn layout(&self) -> &LevelLayout {
        &self.layout
    }

    pub fn agent_position(&self) -> Pos {
        self.agent
    }

    pub fn episode_return(&self) -> f64 {
        self.episode_return
    }

    pub fn episode_steps(&self) -> u32 {
        self.steps
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn observe(&self) -> Observation {
        let mut cells: Vec<i32> = self.grid.grid.iter().map(|c| c.code()).collect();
        let w = self.grid.width;
        for &(r, c) in &self.tail {
            cells[r * w + c] = TAIL_CODE;
        }
        for &(r, c) in &self.coins {
            cells[r * w + c] = COIN_CODE;
        }
        for &(r, c) in &self.enemies {
            cells[r * w + c] = ENEMY_CODE;
        }
        cells[self.agent.0 * w + self.agent.1] = AGENT_CODE;
        let remaining = 1.0 - self.steps as f64 / self.spec.max_episode_steps as f64;
        Observation { width: w, height: self.grid.height, cells, aux: vec![remaining] }
    }

    pub fn step(&mut self, action: Action) -> Result<StepResult, EnvError> {
        if self.done {
            return Err(EnvError::EpisodeFinished);
        }
        if action >= NUM_ACTIONS {
            return Err(EnvError::InvalidAction(action));
        }
        self.steps += 1;
        let mut reward = 0.0;
        let dead = self.advance(action, &mut reward);
        if !dead && self.rules.survival_total > 0.0 {
            reward += self.survival_per_step();
        }
        if self.steps >= self.spec.max_episode_steps {
            self.done = true;
        }
        self.episode_return += reward;
        Ok(StepResult { observation: self.observe(), reward, done: self.done, episode_steps: self.steps })
    }

    // With a power-of-two share per step (e.g. 10 over 80 steps) partial sums
    // stay exact and a full episode returns exactly the total.
    fn survival_per_step(&self) -> f64 {
        self.rules.survival_total / self.spec.max_episode_steps as f64
    }

    /// Applies one transition. Returns true when the agent died.
    fn advance(&mut self, action: Action, reward: &mut f64) -> bool {
        let from = self.agent;
        if let Some(target) = self.neighbour(from, action) {
            match self.grid.get(target) {
                Cell::Wall if self.rules.diggable && !self.grid.is_border(target) => {
                    self.grid.set(target, Cell::Open);
                    self.agent = target;
                }
                Cell::Wall => {}
                _ => self.agent = target,
            }
        }
        if self.agent != from && self.rules.tail_len > 0 {
            if self.tail.contains(&self.agent) {
                self.done = true;
                return true;
            }
            self.tail.push_front(from);
            self.tail.truncate(self.rules.tail_len);
        }
        if self.grid.get(self.agent) == Cell::Hazard || self.enemies.contains(&self.agent) {
            self.done = true;
            return true;
        }
        if let Some(i) = self.coins.iter().position(|&c| c == self.agent) {
            self.coins.swap_remove(i);
            *reward += self.rules.coin_reward;
        }
        if self.grid.get(self.agent) == Cell::Goal {
            *reward += self.rules.goal_reward;
            if self.rules.survival_total > 0.0 {
                let left = self.spec.max_episode_steps.saturating_sub(self.steps);
                *reward += self.survival_per_step() * left as f64;
            }
            self.done = true;
            return false;
        }
        if self.move_enemies() {
            self.done = true;
            return true;
        }
        if self.rules.hazard_spawn_period > 0 && self.steps.is_multiple_of(self.rules.hazard_spawn_period) {
            let free: Vec<Pos> = self
                .grid
                .grid
                .iter()
                .enumerate()
                .filter(|(_, c)| matches!(c, Cell::Open | Cell::Start))
                .map(|(i, _)| (i / self.grid.width, i % self.grid.width))
                .collect();
            if let Some(&pos) = free.choose(&mut self.rng) {
                self.grid.set(pos, Cell::Hazard);
                if pos == self.agent {
                    self.done = true;
                    return true;
                }
            }
        }
        false
    }

    /// Each enemy steps toward the agent half the time, otherwise at random.
    /// Returns true when an enemy lands on the agent.
    fn move_enemies(&mut self) -> bool {
        for i in 0..self.enemies.len() {
            let at = self.enemies[i];
            let options: Vec<Pos> = (1..NUM_ACTIONS)
                .filter_map(|a| self.neighbour(at, a))
                .filter(|&p| self.grid.get(p).is_passable())
                .collect();
            if options.is_empty() {
                continue;
            }
            let next = if self.rng.gen_bool(0.5) {
                *options.iter().min_by_key(|p| manhattan(**p, self.agent)).unwrap()
            } else {
                *options.choose(&mut self.rng).unwrap()
            };
            self.enemies[i] = next;
            if next == self.agent {
                return true;
            }
        }
        false
    }

    fn neighbour(&self, (row, col): Pos, action: Action) -> Option<Pos> {
        let (r, c) = match action {
            1 => (row.checked_sub(1)?, col),
            2 => (row + 1, col),
            3 => (row, col.checked_sub(1)?),
            4 => (row, col + 1),
            _ => return None,
        };
        (r < self.grid.height && c < self.grid.width).then_some((r, c))
    }
}

fn dynamics_rng(spec: &EnvSpec, seed: LevelSeed) -> ChaCha8Rng {
    rng_from(&[b"dynamics", spec.env_id.as_bytes(), &seed.0.to_le_bytes()])
}

fn manhattan(a: Pos, b: Pos) -> usize {
    a.0.abs_diff(b.0) + a.1.abs_diff(b.1)
}
