//! Round configuration: presets and TOML files.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::budget::{duration_secs, BudgetPolicy, Limit, Track};
use crate::scoring::{Aggregation, MAX_TRIALS};

/// Timestep cap per training phase at full scale.
pub const FULL_TIMESTEP_BUDGET: u64 = 8_000_000;
/// Training level restriction for the generalization setting.
pub const GENERALIZATION_LEVELS: u64 = 200;
/// Rollout levels per trained checkpoint at full scale.
pub const FULL_ROLLOUT_LEVELS: u32 = 1000;
/// Wall clock per training phase at full scale.
pub const FULL_WALL_CLOCK: Duration = Duration::from_secs(2 * 60 * 60);

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RoundId {
    WarmUp,
    Round1,
    Round2,
    FinalSampleEfficiency,
    FinalGeneralization,
    Custom(String),
}

impl RoundId {
    pub const PRESETS: [&'static str; 5] = ["warmup", "round1", "round2", "final-se", "final-gen"];

    pub fn as_str(&self) -> &str {
        match self {
            RoundId::WarmUp => "warmup",
            RoundId::Round1 => "round1",
            RoundId::Round2 => "round2",
            RoundId::FinalSampleEfficiency => "final-se",
            RoundId::FinalGeneralization => "final-gen",
            RoundId::Custom(name) => name,
        }
    }
}

impl fmt::Display for RoundId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RoundId {
    type Err = ConfigError;

    /// Round ids double as store directory names, so custom ids are
    /// restricted to `[A-Za-z0-9._-]` and may not start with a dot.
    fn from_str(s: &str) -> Result<Self, ConfigError> {
        Ok(match s {
            "warmup" => RoundId::WarmUp,
            "round1" => RoundId::Round1,
            "round2" => RoundId::Round2,
            "final-se" => RoundId::FinalSampleEfficiency,
            "final-gen" => RoundId::FinalGeneralization,
            _ => {
                let ok = !s.is_empty()
                    && !s.starts_with('.')
                    && s.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-'));
                if !ok {
                    return Err(ConfigError::Invalid(format!("round id `{s}` is not a valid name")));
                }
                RoundId::Custom(s.to_string())
            }
        })
    }
}

impl Serialize for RoundId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for RoundId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error(
        "unknown round preset `{0}` (expected one of warmup, round1, round2, final-se, final-gen, or a config file)"
    )]
    UnknownPreset(String),
    #[error("invalid round config: {0}")]
    Invalid(String),
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parsing round config: {0}")]
    Parse(#[from] toml::de::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoundConfig {
    pub round_id: RoundId,
    pub env_ids_public: Vec<String>,
    #[serde(default)]
    pub env_ids_holdout: Vec<String>,
    pub timestep_budget: u64,
    #[serde(default)]
    pub level_start: u32,
    pub num_levels: Limit,
    pub rollout_levels: u32,
    pub trials: u32,
    #[serde(rename = "wall_clock_limit_secs", with = "duration_secs")]
    pub wall_clock_limit: Duration,
    pub aggregation: Aggregation,
    /// Mixed into every derived level and evaluation seed.
    #[serde(default)]
    pub seed: u64,
}

fn ids(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

const ALL_PUBLIC: [&str; 6] = ["gridmaze", "collector", "miner-lite", "corridor", "chaser-lite", "plunder-lite"];
const ALL_HOLDOUT: [&str; 2] = ["caterpillar-lite", "safezone-lite"];

impl RoundConfig {
    /// Built-in preset at full scale. Environment lists use the toy suite.
    pub fn preset(name: &str) -> Result<Self, ConfigError> {
        let round_id: RoundId = name.parse().map_err(|_| ConfigError::UnknownPreset(name.to_string()))?;
        let base = |public: &[&str], holdout: &[&str], num_levels, trials, aggregation| RoundConfig {
            round_id: round_id.clone(),
            env_ids_public: ids(public),
            env_ids_holdout: ids(holdout),
            timestep_budget: FULL_TIMESTEP_BUDGET,
            level_start: 0,
            num_levels,
            rollout_levels: FULL_ROLLOUT_LEVELS,
            trials,
            wall_clock_limit: FULL_WALL_CLOCK,
            aggregation,
            seed: 0,
        };
        let generalization = Limit::Finite(GENERALIZATION_LEVELS);
        Ok(match round_id {
            RoundId::WarmUp => base(&["gridmaze"], &[], Limit::Unlimited, 1, Aggregation::PlainMean),
            RoundId::Round1 => base(
                &["gridmaze", "collector", "miner-lite"],
                &["caterpillar-lite"],
                Limit::Unlimited,
                1,
                Aggregation::WeightedPublicHoldout,
            ),
            RoundId::Round2 => base(&ALL_PUBLIC, &ALL_HOLDOUT, generalization, 1, Aggregation::WeightedPublicHoldout),
            RoundId::FinalSampleEfficiency => {
                base(&ALL_PUBLIC, &ALL_HOLDOUT, Limit::Unlimited, 3, Aggregation::PlainMean)
            }
            RoundId::FinalGeneralization => base(&ALL_PUBLIC, &ALL_HOLDOUT, generalization, 3, Aggregation::PlainMean),
            RoundId::Custom(_) => return Err(ConfigError::UnknownPreset(name.to_string())),
        })
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let config: RoundConfig = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::from_toml_str(&text)
    }

    /// A preset name, or else a path to a TOML file.
    pub fn load(preset_or_path: &str) -> Result<Self, ConfigError> {
        if RoundId::PRESETS.contains(&preset_or_path) {
            return Self::preset(preset_or_path);
        }
        let path = Path::new(preset_or_path);
        if path.exists() {
            return Self::from_file(path);
        }
        Err(ConfigError::UnknownPreset(preset_or_path.to_string()))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("round config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |msg: String| Err(ConfigError::Invalid(msg));
        if self.env_ids_public.is_empty() && self.env_ids_holdout.is_empty() {
            return bad("no environments".into());
        }
        let mut seen = std::collections::BTreeSet::new();
        for id in self.env_ids() {
            if !seen.insert(id) {
                return bad(format!("environment `{id}` listed twice"));
            }
        }
        if self.trials == 0 || self.trials as usize > MAX_TRIALS {
            return bad(format!("trials must be in 1..={MAX_TRIALS}, got {}", self.trials));
        }
        if self.rollout_levels == 0 {
            return bad("rollout_levels must be positive".into());
        }
        if self.num_levels == Limit::Finite(0) {
            return bad("num_levels must be positive or unlimited".into());
        }
        if self.wall_clock_limit.is_zero() {
            return bad("wall_clock_limit_secs must be positive".into());
        }
        match self.round_id {
            RoundId::WarmUp if self.env_ids_public.len() != 1 || !self.env_ids_holdout.is_empty() => {
                bad("warmup uses exactly one public environment and no hold-out".into())
            }
            RoundId::WarmUp if self.aggregation != Aggregation::PlainMean => bad("warmup uses the plain mean".into()),
            RoundId::FinalGeneralization if self.num_levels.is_unlimited() => {
                bad("final-gen requires a finite level count".into())
            }
            RoundId::FinalSampleEfficiency if !self.num_levels.is_unlimited() => {
                bad("final-se requires unlimited levels".into())
            }
            _ => self.policy().validate().map_err(|e| ConfigError::Invalid(e.to_string())),
        }
    }

    /// Public environments first, then hold-out, in configured order.
    pub fn env_ids(&self) -> impl Iterator<Item = &str> {
        self.env_ids_public.iter().chain(&self.env_ids_holdout).map(String::as_str)
    }

    pub fn is_holdout(&self, env_id: &str) -> bool {
        self.env_ids_holdout.iter().any(|e| e == env_id)
    }

    pub fn policy(&self) -> BudgetPolicy {
        BudgetPolicy {
            timestep_budget: Limit::Finite(self.timestep_budget),
            level_start: self.level_start,
            num_levels: self.num_levels,
            wall_clock_limit: self.wall_clock_limit,
        }
    }

    pub fn track(&self) -> Track {
        self.policy().track()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_match_round_shapes() {
        let w = RoundConfig::preset("warmup").unwrap();
        assert_eq!((w.env_ids_public.len(), w.env_ids_holdout.len()), (1, 0));
        assert_eq!(w.aggregation, Aggregation::PlainMean);
        assert_eq!(w.rollout_levels, 1000);

        let r1 = RoundConfig::preset("round1").unwrap();
        assert_eq!((r1.env_ids_public.len(), r1.env_ids_holdout.len()), (3, 1));
        assert_eq!(r1.track(), Track::SampleEfficiency);

        let r2 = RoundConfig::preset("round2").unwrap();
        assert_eq!(r2.num_levels, Limit::Finite(200));
        assert_eq!(r2.track(), Track::Generalization);

        let se = RoundConfig::preset("final-se").unwrap();
        assert_eq!((se.trials, se.num_levels, se.timestep_budget), (3, Limit::Unlimited, 8_000_000));
        let gen = RoundConfig::preset("final-gen").unwrap();
        assert_eq!((gen.trials, gen.num_levels, gen.timestep_budget), (3, Limit::Finite(200), 8_000_000));
        for name in RoundId::PRESETS {
            RoundConfig::preset(name).unwrap().validate().unwrap();
        }
    }

    #[test]
    fn toml_round_trip() {
        let mut c = RoundConfig::preset("round2").unwrap();
        c.round_id = "desk-r2".parse().unwrap();
        c.timestep_budget = 500;
        c.wall_clock_limit = Duration::from_millis(2500);
        let back = RoundConfig::from_toml_str(&c.to_toml_string()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn rejects_bad_configs() {
        let mut c = RoundConfig::preset("final-gen").unwrap();
        c.trials = 4;
        assert!(c.validate().is_err());
        c.trials = 0;
        assert!(c.validate().is_err());
        c.trials = 3;
        c.num_levels = Limit::Unlimited;
        assert!(c.validate().is_err());

        let mut w = RoundConfig::preset("warmup").unwrap();
        w.env_ids_holdout.push("safezone-lite".into());
        assert!(w.validate().is_err());

        assert!(RoundConfig::from_toml_str("round_id = \"x\"\nbogus = 1\n").is_err());
        assert!("../etc".parse::<RoundId>().is_err());
        assert!(matches!(RoundConfig::load("nope"), Err(ConfigError::UnknownPreset(_))));
    }
}
