use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EnvError, EnvSession, EnvSpec, GenParams, LevelSeed, Visibility};

/// Game mechanics an environment runs on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GameKind {
    Gridmaze,
    Collector,
    Corridor,
    Chaser,
    Plunder,
    Miner,
    Caterpillar,
    Safezone,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayoutKind {
    Cave,
    Corridor,
}

/// Reward scheme and entity counts for a [`GameKind`].
#[derive(Debug, Clone, PartialEq)]
pub struct GameRules {
    pub layout: LayoutKind,
    pub coins: usize,
    pub coin_reward: f64,
    pub goal_reward: f64,
    pub hazards: usize,
    pub enemies: usize,
    /// Moving into an interior wall digs it out.
    pub diggable: bool,
    /// Number of trailing cells that kill the agent on contact.
    pub tail_len: usize,
    /// Total reward for surviving a full episode (spread evenly per step).
    pub survival_total: f64,
    /// Steps between hazard spawns; 0 disables spawning.
    pub hazard_spawn_period: u32,
}

impl GameRules {
    const BASE: GameRules = GameRules {
        layout: LayoutKind::Cave,
        coins: 0,
        coin_reward: 0.0,
        goal_reward: 0.0,
        hazards: 0,
        enemies: 0,
        diggable: false,
        tail_len: 0,
        survival_total: 0.0,
        hazard_spawn_period: 0,
    };

    /// Analytic `(r_min, r_max)`: nothing collected versus everything
    /// collected plus the goal (or a full survival for survival games).
    pub fn return_bounds(&self) -> (f64, f64) {
        if self.survival_total > 0.0 {
            (0.0, self.survival_total)
        } else {
            (0.0, self.coins as f64 * self.coin_reward + self.goal_reward)
        }
    }
}

impl GameKind {
    pub fn rules(self) -> GameRules {
        let base = GameRules::BASE;
        match self {
            GameKind::Gridmaze => GameRules { goal_reward: 10.0, ..base },
            GameKind::Collector => GameRules { coins: 5, coin_reward: 2.0, goal_reward: 10.0, ..base },
            GameKind::Corridor => GameRules {
                layout: LayoutKind::Corridor,
                hazards: 4,
                coins: 3,
                coin_reward: 2.0,
                goal_reward: 10.0,
                ..base
            },
            GameKind::Chaser => GameRules { enemies: 1, coins: 5, coin_reward: 1.0, goal_reward: 5.0, ..base },
            GameKind::Plunder => GameRules { coins: 4, coin_reward: 5.0, hazards: 4, goal_reward: 5.0, ..base },
            GameKind::Miner => GameRules { diggable: true, coins: 3, coin_reward: 2.0, goal_reward: 6.0, ..base },
            GameKind::Caterpillar => GameRules { tail_len: 3, coins: 5, coin_reward: 1.0, goal_reward: 5.0, ..base },
            GameKind::Safezone => GameRules { survival_total: 10.0, hazard_spawn_period: 4, ..base },
        }
    }
}

fn builtin(env_id: &str, kind: GameKind, visibility: Visibility, max_episode_steps: u32, gen: GenParams) -> EnvSpec {
    let (r_min, r_max) = kind.rules().return_bounds();
    EnvSpec { env_id: env_id.to_string(), kind, r_min, r_max, visibility, max_episode_steps, gen }
}

fn cave(size: usize, fill_prob: f64) -> GenParams {
    GenParams { width: size, height: size, fill_prob, iterations: 3 }
}

/// The embedded toy suite: six public and two hold-out environments.
pub fn builtin_registry() -> Vec<EnvSpec> {
    use Visibility::*;
    vec![
        builtin("gridmaze", GameKind::Gridmaze, Public, 60, cave(11, 0.45)),
        builtin("collector", GameKind::Collector, Public, 80, cave(11, 0.45)),
        builtin(
            "corridor",
            GameKind::Corridor,
            Public,
            40,
            GenParams { width: 15, height: 5, fill_prob: 0.0, iterations: 0 },
        ),
        builtin("chaser-lite", GameKind::Chaser, Public, 60, cave(11, 0.45)),
        builtin("plunder-lite", GameKind::Plunder, Public, 80, cave(13, 0.40)),
        builtin("miner-lite", GameKind::Miner, Public, 60, cave(11, 0.50)),
        builtin("caterpillar-lite", GameKind::Caterpillar, HoldOut, 60, cave(11, 0.45)),
        builtin("safezone-lite", GameKind::Safezone, HoldOut, 80, cave(11, 0.45)),
    ]
}

#[derive(Debug, Deserialize)]
struct SuiteFile {
    #[serde(default)]
    env: Vec<EnvSpec>,
}

/// Ordered set of environment specs with unique ids.
#[derive(Debug, Clone, Default)]
pub struct EnvRegistry {
    specs: Vec<EnvSpec>,
}

impl EnvRegistry {
    pub fn builtin() -> Self {
        EnvRegistry { specs: builtin_registry() }
    }

    pub fn empty() -> Self {
        EnvRegistry::default()
    }

    pub fn register(&mut self, spec: EnvSpec) -> Result<(), EnvError> {
        spec.validate()?;
        if self.specs.iter().any(|s| s.env_id == spec.env_id) {
            return Err(EnvError::InvalidSpec(format!("duplicate env_id `{}`", spec.env_id)));
        }
        self.specs.push(spec);
        Ok(())
    }

    /// Registers every `[[env]]` entry of a TOML suite definition.
    pub fn extend_from_suite_str(&mut self, text: &str) -> Result<usize, EnvError> {
        let suite: SuiteFile = toml::from_str(text).map_err(|e| EnvError::Suite(e.to_string()))?;
        let n = suite.env.len();
        for spec in suite.env {
            self.register(spec)?;
        }
        Ok(n)
    }

    pub fn extend_from_suite_file(&mut self, path: &Path) -> Result<usize, EnvError> {
        let text = std::fs::read_to_string(path).map_err(|e| EnvError::Suite(format!("{}: {e}", path.display())))?;
        self.extend_from_suite_str(&text)
    }

    pub fn get(&self, env_id: &str) -> Result<&EnvSpec, EnvError> {
        self.specs.iter().find(|s| s.env_id == env_id).ok_or_else(|| EnvError::UnknownEnv(env_id.to_string()))
    }

    pub fn specs(&self) -> &[EnvSpec] {
        &self.specs
    }

    pub fn ids_with(&self, visibility: Visibility) -> Vec<String> {
        self.specs.iter().filter(|s| s.visibility == visibility).map(|s| s.env_id.clone()).collect()
    }

    pub fn make_env(&self, env_id: &str, seed: LevelSeed) -> Result<EnvSession, EnvError> {
        EnvSession::new(self.get(env_id)?, seed)
    }
}
