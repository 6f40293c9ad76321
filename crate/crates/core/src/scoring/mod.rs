//! Metric computation: normalized returns, round and trial aggregation,
//! max-over-trials track scores and leaderboard ranking.
//!
//! Everything here is a pure function of its inputs.

mod report;

pub use report::{format_score, EnvLine, ScoreReport, TrialLine, NORMALIZATION_FORMULA, TRACK_FORMULA};

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use crate::budget::Track;

/// Largest trial count a track score aggregates.
pub const MAX_TRIALS: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScoringError {
    #[error("degenerate bounds: r_max ({r_max}) must exceed r_min ({r_min})")]
    DegenerateBounds { r_min: f64, r_max: f64 },
    #[error("no scores to aggregate")]
    EmptyScores,
    #[error("{0} trials given, at most {MAX_TRIALS} allowed")]
    TooManyTrials(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedReturn {
    pub env_id: String,
    pub value: f64,
    pub raw_mean: f64,
    pub r_min: f64,
    pub r_max: f64,
}

/// `clamp((raw_mean - r_min) / (r_max - r_min), 0, 1)`.
pub fn normalized_return(
    env_id: &str,
    raw_mean: f64,
    r_min: f64,
    r_max: f64,
) -> Result<NormalizedReturn, ScoringError> {
    if r_max.partial_cmp(&r_min) != Some(Ordering::Greater) {
        return Err(ScoringError::DegenerateBounds { r_min, r_max });
    }
    let value = ((raw_mean - r_min) / (r_max - r_min)).clamp(0.0, 1.0);
    Ok(NormalizedReturn { env_id: env_id.to_string(), value, raw_mean, r_min, r_max })
}

/// Normalized return of a failed phase: pinned to zero.
pub fn failed_return(env_id: &str, r_min: f64, r_max: f64) -> NormalizedReturn {
    NormalizedReturn { env_id: env_id.to_string(), value: 0.0, raw_mean: r_min, r_max, r_min }
}

/// Mean of a list of raw episode returns; `None` when empty.
pub fn mean_return(returns: &[f64]) -> Option<f64> {
    if returns.is_empty() {
        None
    } else {
        Some(returns.iter().sum::<f64>() / returns.len() as f64)
    }
}

fn mean(scores: &[NormalizedReturn]) -> f64 {
    scores.iter().map(|s| s.value).sum::<f64>() / scores.len() as f64
}

/// Half the weight on the public set, half on the hold-out set; a plain
/// mean when either side is empty.
pub fn round_score(public: &[NormalizedReturn], holdout: &[NormalizedReturn]) -> Result<f64, ScoringError> {
    match (public.is_empty(), holdout.is_empty()) {
        (true, true) => Err(ScoringError::EmptyScores),
        (false, true) => Ok(mean(public)),
        (true, false) => Ok(mean(holdout)),
        (false, false) => Ok(0.5 * mean(public) + 0.5 * mean(holdout)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    WeightedPublicHoldout,
    PlainMean,
}

impl Aggregation {
    pub fn formula_id(self) -> &'static str {
        match self {
            Aggregation::WeightedPublicHoldout => "0.5*mean(public)+0.5*mean(holdout)",
            Aggregation::PlainMean => "mean(all)",
        }
    }

    pub fn aggregate(self, public: &[NormalizedReturn], holdout: &[NormalizedReturn]) -> Result<f64, ScoringError> {
        match self {
            Aggregation::WeightedPublicHoldout => round_score(public, holdout),
            Aggregation::PlainMean => {
                let all: Vec<_> = public.iter().chain(holdout).cloned().collect();
                if all.is_empty() {
                    return Err(ScoringError::EmptyScores);
                }
                Ok(mean(&all))
            }
        }
    }

    /// Per-environment weights `(public, holdout)` the aggregation applies.
    pub fn weights(self, n_public: usize, n_holdout: usize) -> (f64, f64) {
        let inv = |n: usize| if n == 0 { 0.0 } else { 1.0 / n as f64 };
        match self {
            Aggregation::PlainMean => {
                let w = inv(n_public + n_holdout);
                (w, w)
            }
            Aggregation::WeightedPublicHoldout => match (n_public, n_holdout) {
                (_, 0) => (inv(n_public), 0.0),
                (0, _) => (0.0, inv(n_holdout)),
                _ => (0.5 * inv(n_public), 0.5 * inv(n_holdout)),
            },
        }
    }
}

impl fmt::Display for Aggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.formula_id())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialScore {
    pub trial_index: u32,
    pub per_env: BTreeMap<String, NormalizedReturn>,
    pub value: f64,
}

/// Unweighted mean over every environment of a trial.
pub fn trial_score(trial_index: u32, all_env_scores: Vec<NormalizedReturn>) -> Result<TrialScore, ScoringError> {
    if all_env_scores.is_empty() {
        return Err(ScoringError::EmptyScores);
    }
    let value = mean(&all_env_scores);
    Ok(TrialScore { trial_index, per_env: by_env(all_env_scores), value })
}

/// A trial aggregated with an explicit public/hold-out split.
pub fn trial_score_with(
    trial_index: u32,
    aggregation: Aggregation,
    public: Vec<NormalizedReturn>,
    holdout: Vec<NormalizedReturn>,
) -> Result<TrialScore, ScoringError> {
    let value = aggregation.aggregate(&public, &holdout)?;
    Ok(TrialScore { trial_index, per_env: by_env(public.into_iter().chain(holdout).collect()), value })
}

fn by_env(scores: Vec<NormalizedReturn>) -> BTreeMap<String, NormalizedReturn> {
    scores.into_iter().map(|s| (s.env_id.clone(), s)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackScore {
    pub track: Track,
    pub trials: Vec<TrialScore>,
    pub value: f64,
}

/// Best trial wins.
pub fn track_score(track: Track, trials: Vec<TrialScore>) -> Result<TrackScore, ScoringError> {
    if trials.is_empty() {
        return Err(ScoringError::EmptyScores);
    }
    if trials.len() > MAX_TRIALS {
        return Err(ScoringError::TooManyTrials(trials.len()));
    }
    let value = trials.iter().map(|t| t.value).fold(f64::NEG_INFINITY, f64::max);
    Ok(TrackScore { track, trials, value })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub rank: usize,
    pub submission_id: String,
    pub value: f64,
}

/// Sorts descending by value. Equal values share the smaller rank and are
/// displayed in lexicographic id order.
pub fn rank_leaderboard(entries: Vec<(String, f64)>) -> Vec<RankedEntry> {
    let mut entries = entries;
    entries.sort_by(|a, b| match b.1.total_cmp(&a.1) {
        Ordering::Equal => a.0.cmp(&b.0),
        other => other,
    });
    let mut ranked: Vec<RankedEntry> = Vec::with_capacity(entries.len());
    for (i, (submission_id, value)) in entries.into_iter().enumerate() {
        let rank = match ranked.last() {
            Some(prev) if prev.value == value => prev.rank,
            _ => i + 1,
        };
        ranked.push(RankedEntry { rank, submission_id, value });
    }
    ranked
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn nr(v: f64) -> NormalizedReturn {
        normalized_return("e", v, 0.0, 1.0).unwrap()
    }

    #[test]
    fn normalization_examples() {
        assert_eq!(normalized_return("e", 5.0, 0.0, 10.0).unwrap().value, 0.5);
        assert_eq!(normalized_return("e", -1.0, 0.0, 10.0).unwrap().value, 0.0);
        assert_eq!(normalized_return("e", 10.0, 0.0, 10.0).unwrap().value, 1.0);
        assert_eq!(normalized_return("e", 11.0, 0.0, 10.0).unwrap().value, 1.0);
        assert_eq!(
            normalized_return("e", 1.0, 3.0, 3.0).unwrap_err(),
            ScoringError::DegenerateBounds { r_min: 3.0, r_max: 3.0 }
        );
    }

    #[test]
    fn round_score_examples() {
        // (0.2 + 0.4 + 0.6) / 6 + 0.8 / 2
        let direct = (0.2 + 0.4 + 0.6) / 6.0 + 0.8 / 2.0;
        let got = round_score(&[nr(0.2), nr(0.4), nr(0.6)], &[nr(0.8)]).unwrap();
        assert!((got - direct).abs() < 1e-12);
        assert!((got - 0.6).abs() < 1e-12);

        let direct = 6.0 * 0.3 / 12.0 + 4.0 * 0.5 / 8.0;
        let got = round_score(&vec![nr(0.3); 6], &vec![nr(0.5); 4]).unwrap();
        assert!((got - direct).abs() < 1e-12);
        assert!((got - 0.4).abs() < 1e-12);

        assert_eq!(round_score(&vec![nr(1.0); 3], &[nr(1.0)]).unwrap(), 1.0);
        assert_eq!(round_score(&[nr(0.25)], &[]).unwrap(), 0.25);
        assert_eq!(round_score(&[], &[]).unwrap_err(), ScoringError::EmptyScores);
    }

    #[test]
    fn weights_match_printed_equations() {
        let (p, h) = Aggregation::WeightedPublicHoldout.weights(3, 1);
        assert!((p - 1.0 / 6.0).abs() < 1e-15 && (h - 0.5).abs() < 1e-15);
        let (p, h) = Aggregation::WeightedPublicHoldout.weights(6, 4);
        assert!((p - 1.0 / 12.0).abs() < 1e-15 && (h - 1.0 / 8.0).abs() < 1e-15);
        let (p, h) = Aggregation::PlainMean.weights(16, 4);
        assert_eq!((p, h), (1.0 / 20.0, 1.0 / 20.0));
    }

    #[test]
    fn trial_score_examples() {
        assert_eq!(trial_score(1, vec![nr(1.0); 20]).unwrap().value, 1.0);
        assert_eq!(trial_score(1, vec![nr(0.0), nr(1.0)]).unwrap().value, 0.5);
        // Arithmetic mean of 0.1..0.8 is 3.6 / 8 = 0.45.
        let eight: Vec<_> =
            (1..=8).map(|i| normalized_return(&format!("e{i}"), i as f64 / 10.0, 0.0, 1.0).unwrap()).collect();
        assert!((trial_score(1, eight).unwrap().value - 0.45).abs() < 1e-12);
        assert_eq!(trial_score(1, vec![]).unwrap_err(), ScoringError::EmptyScores);
    }

    fn trial(i: u32, v: f64) -> TrialScore {
        trial_score(i, vec![nr(v)]).unwrap()
    }

    #[test]
    fn track_score_examples() {
        let t = Track::Generalization;
        assert_eq!(track_score(t, vec![trial(1, 0.3), trial(2, 0.5), trial(3, 0.4)]).unwrap().value, 0.5);
        assert_eq!(track_score(t, vec![trial(1, 0.7)]).unwrap().value, 0.7);
        assert_eq!(track_score(t, vec![trial(1, 0.42), trial(2, 0.42), trial(3, 0.42)]).unwrap().value, 0.42);
        assert_eq!(track_score(t, vec![]).unwrap_err(), ScoringError::EmptyScores);
        assert_eq!(track_score(t, vec![trial(1, 0.1); 4]).unwrap_err(), ScoringError::TooManyTrials(4));
    }

    #[test]
    fn ranking_ties_and_empty() {
        assert!(rank_leaderboard(vec![]).is_empty());
        let ranked = rank_leaderboard(vec![("b".into(), 0.5), ("a".into(), 0.5), ("c".into(), 0.9), ("d".into(), 0.1)]);
        let view: Vec<_> = ranked.iter().map(|r| (r.rank, r.submission_id.as_str())).collect();
        assert_eq!(view, vec![(1, "c"), (2, "a"), (2, "b"), (4, "d")]);
    }

    proptest! {
        #[test]
        fn scores_stay_in_unit_interval(
            raws in prop::collection::vec(-50.0f64..50.0, 1..12),
            split in 0usize..12,
        ) {
            let scores: Vec<_> = raws.iter().map(|&r| normalized_return("e", r, -10.0, 10.0).unwrap()).collect();
            for s in &scores {
                prop_assert!((0.0..=1.0).contains(&s.value));
            }
            let split = split.min(scores.len());
            let (p, h) = scores.split_at(split);
            let r = round_score(p, h).unwrap();
            prop_assert!((0.0..=1.0).contains(&r));
            let t = trial_score(1, scores.clone()).unwrap().value;
            prop_assert!((0.0..=1.0).contains(&t));
        }

        #[test]
        fn raising_one_env_never_lowers_scores(
            values in prop::collection::vec(0.0f64..=1.0, 2..10),
            idx in 0usize..10,
            bump in 0.0f64..=1.0,
            split in 0usize..10,
        ) {
            let idx = idx % values.len();
            let split = split.min(values.len());
            let before: Vec<_> = values.iter().map(|&v| nr(v)).collect();
            let mut after = before.clone();
            after[idx] = nr((values[idx] + bump).min(1.0));
            let (bp, bh) = before.split_at(split);
            let (ap, ah) = after.split_at(split);
            prop_assert!(round_score(ap, ah).unwrap() >= round_score(bp, bh).unwrap() - 1e-15);
            let tb = trial_score(1, before.clone()).unwrap();
            let ta = trial_score(1, after.clone()).unwrap();
            prop_assert!(ta.value >= tb.value - 1e-15);
            let other = trial(2, 0.37);
            let kb = track_score(Track::SampleEfficiency, vec![tb, other.clone()]).unwrap().value;
            let ka = track_score(Track::SampleEfficiency, vec![ta, other]).unwrap().value;
            prop_assert!(ka >= kb);
        }

        #[test]
        fn common_scale_preserves_normalization(
            raw in -20.0f64..20.0,
            lo in -10.0f64..0.0,
            width in 0.5f64..10.0,
            scale in 0.01f64..100.0,
        ) {
            let a = normalized_return("e", raw, lo, lo + width).unwrap().value;
            let b = normalized_return("e", raw * scale, lo * scale, (lo + width) * scale).unwrap().value;
            prop_assert!((a - b).abs() < 1e-9);
        }
    }
}
