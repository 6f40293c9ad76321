//! Seed-deterministic toy environments on procedurally generated grids.
//!
//! Each environment is a small grid game: the agent starts on the `Start`
//! cell, moves in four directions, and the episode ends at a `Goal`, on a
//! `Hazard`, on a game-specific death, or at `max_episode_steps`. A level is
//! fully identified by `(env_id, LevelSeed)`.

mod ca;
mod game;
mod suite;

pub use ca::{ca_generate, flood_fill, place_entities, valid_entity_cells, MAX_GENERATION_ATTEMPTS};
pub use game::{EnvSession, NUM_ACTIONS};
pub use suite::{builtin_registry, EnvRegistry, GameKind, GameRules};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Action = u32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("level generation failed after {attempts} attempts")]
    GenerationFailed { attempts: u32 },
    #[error("unknown environment `{0}`")]
    UnknownEnv(String),
    #[error("episode already finished")]
    EpisodeFinished,
    #[error("invalid action {0}")]
    InvalidAction(Action),
    #[error("invalid environment spec: {0}")]
    InvalidSpec(String),
    #[error("suite file: {0}")]
    Suite(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Visibility {
    Public,
    HoldOut,
}

/// Parameters for the layout generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenParams {
    pub width: usize,
    pub height: usize,
    #[serde(default = "default_fill_prob")]
    pub fill_prob: f64,
    #[serde(default = "default_iterations")]
    pub iterations: u32,
}

fn default_fill_prob() -> f64 {
    0.45
}

fn default_iterations() -> u32 {
    3
}

/// Registry entry for one environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub env_id: String,
    pub kind: GameKind,
    pub r_min: f64,
    pub r_max: f64,
    pub visibility: Visibility,
    pub max_episode_steps: u32,
    #[serde(flatten)]
    pub gen: GenParams,
}

impl EnvSpec {
    pub fn validate(&self) -> Result<(), EnvError> {
        if self.env_id.is_empty() {
            return Err(EnvError::InvalidSpec("empty env_id".into()));
        }
        if self.r_max.partial_cmp(&self.r_min) != Some(std::cmp::Ordering::Greater) {
            return Err(EnvError::InvalidSpec(format!(
                "{}: r_max ({}) must exceed r_min ({})",
                self.env_id, self.r_max, self.r_min
            )));
        }
        if self.max_episode_steps == 0 {
            return Err(EnvError::InvalidSpec(format!("{}: max_episode_steps must be >= 1", self.env_id)));
        }
        if self.gen.width < 5 || self.gen.height < 5 {
            return Err(EnvError::InvalidSpec(format!("{}: grid must be at least 5x5", self.env_id)));
        }
        if !(0.0..=1.0).contains(&self.gen.fill_prob) {
            return Err(EnvError::InvalidSpec(format!("{}: fill_prob outside [0,1]", self.env_id)));
        }
        Ok(())
    }
}

/// Identity of one procedurally generated level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LevelSeed(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Cell {
    Wall,
    Open,
    Goal,
    Hazard,
    Start,
}

impl Cell {
    /// Cells an agent can stand on without the episode ending badly.
    pub fn is_passable(self) -> bool {
        matches!(self, Cell::Open | Cell::Goal | Cell::Start)
    }

    pub fn code(self) -> i32 {
        match self {
            Cell::Open => 0,
            Cell::Wall => 1,
            Cell::Goal => 2,
            Cell::Hazard => 3,
            Cell::Start => 4,
        }
    }
}

/// Grid position as `(row, col)`.
pub type Pos = (usize, usize);

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LevelLayout {
    pub width: usize,
    pub height: usize,
    /// Row-major.
    pub grid: Vec<Cell>,
    pub entity_positions: Vec<Pos>,
}

impl LevelLayout {
    pub fn filled(width: usize, height: usize, cell: Cell) -> Self {
        LevelLayout { width, height, grid: vec![cell; width * height], entity_positions: Vec::new() }
    }

    pub fn get(&self, (row, col): Pos) -> Cell {
        self.grid[row * self.width + col]
    }

    pub fn set(&mut self, (row, col): Pos, cell: Cell) {
        self.grid[row * self.width + col] = cell;
    }

    pub fn is_border(&self, (row, col): Pos) -> bool {
        row == 0 || col == 0 || row + 1 == self.height || col + 1 == self.width
    }

    pub fn positions_of(&self, cell: Cell) -> Vec<Pos> {
        self.grid
            .iter()
            .enumerate()
            .filter(|(_, c)| **c == cell)
            .map(|(i, _)| (i / self.width, i % self.width))
            .collect()
    }

    pub fn start(&self) -> Option<Pos> {
        self.positions_of(Cell::Start).into_iter().next()
    }

    /// Checks the structural invariants: one Start, at least one Goal, every
    /// Goal reachable from Start through passable cells.
    pub fn check_invariants(&self) -> Result<(), String> {
        if self.grid.len() != self.width * self.height {
            return Err("grid size does not match dimensions".into());
        }
        let starts = self.positions_of(Cell::Start);
        if starts.len() != 1 {
            return Err(format!("expected exactly one Start, found {}", starts.len()));
        }
        let goals = self.positions_of(Cell::Goal);
        if goals.is_empty() {
            return Err("no Goal cell".into());
        }
        let reach = flood_fill(self, starts[0]);
        for g in goals {
            if !reach[g.0 * self.width + g.1] {
                return Err(format!("Goal {g:?} unreachable from Start"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub width: usize,
    pub height: usize,
    /// Row-major cell codes, `width * height` long.
    pub cells: Vec<i32>,
    pub aux: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
    pub episode_steps: u32,
}
