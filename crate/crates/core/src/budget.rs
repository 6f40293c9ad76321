//! Timestep and level-set metering around an environment session.
//!
//! A [`BudgetedSession`] counts every successful environment transition
//! across episode boundaries and refuses the step that would exceed the
//! timestep budget. In generalization mode (finite `num_levels`) every
//! reset must land inside `[level_start, level_start + num_levels)`.

use std::fmt;
use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::envcore::{Action, EnvError, EnvSession, LevelSeed, Observation, StepResult};

/// A count that may be unbounded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Limit {
    Finite(u64),
    Unlimited,
}

impl Limit {
    pub fn is_unlimited(self) -> bool {
        matches!(self, Limit::Unlimited)
    }

    pub fn finite(self) -> Option<u64> {
        match self {
            Limit::Finite(n) => Some(n),
            Limit::Unlimited => None,
        }
    }
}

impl fmt::Display for Limit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Limit::Finite(n) => write!(f, "{n}"),
            Limit::Unlimited => f.write_str("unlimited"),
        }
    }
}

impl Serialize for Limit {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Limit::Finite(n) => s.serialize_u64(*n),
            Limit::Unlimited => s.serialize_str("unlimited"),
        }
    }
}

impl<'de> Deserialize<'de> for Limit {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Count(u64),
            Word(String),
        }
        match Raw::deserialize(d)? {
            Raw::Count(n) => Ok(Limit::Finite(n)),
            Raw::Word(w) if w.eq_ignore_ascii_case("unlimited") => Ok(Limit::Unlimited),
            Raw::Word(w) => Err(serde::de::Error::custom(format!("expected a count or \"unlimited\", got `{w}`"))),
        }
    }
}

/// Evaluation track implied by a level restriction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Track {
    SampleEfficiency,
    Generalization,
}

impl fmt::Display for Track {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Track::SampleEfficiency => "sample_efficiency",
            Track::Generalization => "generalization",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetPolicy {
    pub timestep_budget: Limit,
    #[serde(default)]
    pub level_start: u32,
    pub num_levels: Limit,
    #[serde(with = "duration_secs")]
    pub wall_clock_limit: Duration,
}

impl BudgetPolicy {
    pub fn new(timestep_budget: Limit, num_levels: Limit, wall_clock_limit: Duration) -> Self {
        BudgetPolicy { timestep_budget, level_start: 0, num_levels, wall_clock_limit }
    }

    pub fn validate(&self) -> Result<(), BudgetError> {
        if let Limit::Finite(n) = self.num_levels {
            if n == 0 {
                return Err(BudgetError::InvalidPolicy("num_levels must be positive".into()));
            }
            if self.level_start as u64 + n > 1u64 << 32 {
                return Err(BudgetError::InvalidPolicy("level window exceeds the 32-bit seed space".into()));
            }
        }
        Ok(())
    }

    pub fn track(&self) -> Track {
        if self.num_levels.is_unlimited() {
            Track::SampleEfficiency
        } else {
            Track::Generalization
        }
    }

    pub fn allows_level(&self, seed: LevelSeed) -> bool {
        match self.num_levels {
            Limit::Unlimited => true,
            Limit::Finite(n) => seed.0 >= self.level_start && ((seed.0 - self.level_start) as u64) < n,
        }
    }

    /// Uniform over the level window, or over all 32-bit seeds when unlimited.
    pub fn sample_training_level<R: Rng + ?Sized>(&self, rng: &mut R) -> LevelSeed {
        match self.num_levels {
            Limit::Unlimited => LevelSeed(rng.gen()),
            Limit::Finite(n) => LevelSeed(self.level_start + rng.gen_range(0..n) as u32),
        }
    }
}

pub(crate) mod duration_secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let secs = f64::deserialize(d)?;
        Duration::try_from_secs_f64(secs).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BudgetError {
    #[error("timestep budget exhausted")]
    Exhausted,
    #[error("level {0:?} outside the training window")]
    LevelOutsideWindow(LevelSeed),
    #[error("no episode in progress")]
    NoEpisode,
    #[error("invalid budget policy: {0}")]
    InvalidPolicy(String),
    #[error(transparent)]
    Env(#[from] EnvError),
}

pub type SessionFactory = Box<dyn FnMut(LevelSeed) -> Result<EnvSession, EnvError> + Send>;

/// An environment session whose step and reset traffic is metered.
pub struct BudgetedSession {
    factory: SessionFactory,
    inner: Option<EnvSession>,
    policy: BudgetPolicy,
    steps_used: u64,
    resets: u64,
}

impl BudgetedSession {
    pub fn wrap(factory: SessionFactory, policy: BudgetPolicy) -> Self {
        BudgetedSession { factory, inner: None, policy, steps_used: 0, resets: 0 }
    }

    pub fn policy(&self) -> &BudgetPolicy {
        &self.policy
    }

    pub fn steps_used(&self) -> u64 {
        self.steps_used
    }

    pub fn resets(&self) -> u64 {
        self.resets
    }

    pub fn session(&self) -> Option<&EnvSession> {
        self.inner.as_ref()
    }

    pub fn remaining(&self) -> Limit {
        match self.policy.timestep_budget {
            Limit::Unlimited => Limit::Unlimited,
            Limit::Finite(n) => Limit::Finite(n.saturating_sub(self.steps_used)),
        }
    }

    pub fn is_exhausted(&self) -> bool {
        self.remaining() == Limit::Finite(0)
    }

    pub fn sample_training_level<R: Rng + ?Sized>(&self, rng: &mut R) -> LevelSeed {
        self.policy.sample_training_level(rng)
    }

    /// Starts an episode on `seed`; refuses seeds outside the level window.
    pub fn reset(&mut self, seed: LevelSeed) -> Result<Observation, BudgetError> {
        if !self.policy.allows_level(seed) {
            return Err(BudgetError::LevelOutsideWindow(seed));
        }
        let session = (self.factory)(seed)?;
        let obs = session.observe();
        self.inner = Some(session);
        self.resets += 1;
        Ok(obs)
    }

    pub fn reset_training<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<(LevelSeed, Observation), BudgetError> {
        let seed = self.sample_training_level(rng);
        Ok((seed, self.reset(seed)?))
    }

    pub fn step(&mut self, action: Action) -> Result<StepResult, BudgetError> {
        if self.is_exhausted() {
            return Err(BudgetError::Exhausted);
        }
        let session = self.inner.as_mut().ok_or(BudgetError::NoEpisode)?;
        let result = session.step(action)?;
        self.steps_used += 1;
        Ok(result)
    }
}
