//! Score report export: every number needed to redo the arithmetic by hand.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{mean_return, normalized_return, Aggregation, NormalizedReturn, ScoringError, Track};
use crate::envcore::Visibility;

pub const NORMALIZATION_FORMULA: &str = "clamp((mean(raw_returns)-r_min)/(r_max-r_min),0,1); failed=0";
pub const TRACK_FORMULA: &str = "max(trial values)";

/// Fixed-precision rendering shared by the CLI and the report file.
pub fn format_score(value: f64) -> String {
    format!("{value:.6}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvLine {
    pub env_id: String,
    pub visibility: Visibility,
    /// `None` when the phase succeeded; the failure reason otherwise.
    pub failure: Option<String>,
    pub raw_returns: Vec<f64>,
    pub raw_mean: Option<f64>,
    pub r_min: f64,
    pub r_max: f64,
    pub normalized: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialLine {
    pub trial_index: u32,
    pub envs: Vec<EnvLine>,
    pub value: f64,
    pub value_text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub round_id: String,
    pub submission_id: String,
    pub track: Track,
    pub aggregation: Aggregation,
    pub normalization_formula: String,
    pub trial_formula: String,
    pub track_formula: String,
    pub trials: Vec<TrialLine>,
    pub track_value: f64,
    pub track_value_text: String,
}

impl EnvLine {
    /// Normalized return recomputed from raw returns and bounds.
    pub fn recompute(&self) -> Result<NormalizedReturn, ScoringError> {
        match (&self.failure, mean_return(&self.raw_returns)) {
            (None, Some(mean)) => normalized_return(&self.env_id, mean, self.r_min, self.r_max),
            _ => Ok(super::failed_return(&self.env_id, self.r_min, self.r_max)),
        }
    }
}

impl TrialLine {
    pub fn recompute(&self, aggregation: Aggregation) -> Result<f64, ScoringError> {
        let mut public = Vec::new();
        let mut holdout = Vec::new();
        for env in &self.envs {
            let n = env.recompute()?;
            match env.visibility {
                Visibility::Public => public.push(n),
                Visibility::HoldOut => holdout.push(n),
            }
        }
        aggregation.aggregate(&public, &holdout)
    }
}

impl ScoreReport {
    /// Track value recomputed from the raw returns in the report.
    pub fn recompute(&self) -> Result<f64, ScoringError> {
        let mut best = None::<f64>;
        for t in &self.trials {
            let v = t.recompute(self.aggregation)?;
            best = Some(best.map_or(v, |b| b.max(v)));
        }
        best.ok_or(ScoringError::EmptyScores)
    }

    pub fn write_json(&self, path: &Path) -> std::io::Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let text = serde_json::to_string_pretty(self).map_err(std::io::Error::other)?;
        std::fs::write(path, text)
    }

    pub fn read_json(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(std::io::Error::other)
    }
}
