//! Per-submission track scores and score reports from chain results.

use std::collections::BTreeMap;

use super::execute::{execute_streaming, EvaluationResult, ExecEvent, ExecOptions, JobOutcome};
use super::plan::{plan_round, PlanError};
use super::RoundConfig;
use crate::envcore::{EnvRegistry, EnvSpec, Visibility};
use crate::registry::Submission;
use crate::scoring::{
    failed_return, format_score, mean_return, normalized_return, track_score, trial_score_with, EnvLine, ScoreReport,
    ScoringError, TrackScore, TrialLine, NORMALIZATION_FORMULA, TRACK_FORMULA,
};

#[derive(Debug, Clone)]
pub struct TrackEntry {
    pub score: TrackScore,
    pub report: ScoreReport,
    /// `env/trial: reason` for every chain that did not finish Ok.
    pub failures: Vec<String>,
}

#[derive(Debug, Clone, Default)]
pub struct TrackRun {
    pub entries: BTreeMap<String, TrackEntry>,
    pub results: Vec<EvaluationResult>,
    pub jobs: Vec<JobOutcome>,
}

/// Scores one submission from its chain results. Missing or failed chains
/// count as normalized return 0. Normalized values are recomputed from the
/// raw returns and the env bounds; cached values in the results are ignored.
pub fn score_submission(
    config: &RoundConfig,
    specs: &BTreeMap<String, EnvSpec>,
    submission_id: &str,
    results: &[&EvaluationResult],
) -> Result<TrackEntry, ScoringError> {
    let n_public = config.env_ids_public.len();
    let n_holdout = config.env_ids_holdout.len();
    let (w_public, w_holdout) = config.aggregation.weights(n_public, n_holdout);
    let mut trial_scores = Vec::new();
    let mut trial_lines = Vec::new();
    let mut failures = Vec::new();

    for trial in 0..config.trials {
        let mut public = Vec::new();
        let mut holdout = Vec::new();
        let mut envs = Vec::new();
        for env_id in config.env_ids() {
            let spec = &specs[env_id];
            let result = results.iter().find(|r| r.env_id == env_id && r.trial == trial);
            let failure = match result {
                None => Some("Missing: no result recorded".to_string()),
                Some(r) => r.status.failure().map(|f| f.to_string()),
            };
            let raw_returns = match (result, &failure) {
                (Some(r), None) => r.raw_returns.clone(),
                _ => Vec::new(),
            };
            let raw_mean = mean_return(&raw_returns);
            let normalized = match (&failure, raw_mean) {
                (None, Some(mean)) => normalized_return(env_id, mean, spec.r_min, spec.r_max)?,
                _ => failed_return(env_id, spec.r_min, spec.r_max),
            };
            if let Some(f) = &failure {
                failures.push(format!("{env_id}/{trial}: {f}"));
            }
            let (visibility, weight) = if config.is_holdout(env_id) {
                (Visibility::HoldOut, w_holdout)
            } else {
                (Visibility::Public, w_public)
            };
            envs.push(EnvLine {
                env_id: env_id.to_string(),
                visibility,
                failure,
                raw_returns,
                raw_mean,
                r_min: spec.r_min,
                r_max: spec.r_max,
                normalized: normalized.value,
                weight,
            });
            match visibility {
                Visibility::Public => public.push(normalized),
                Visibility::HoldOut => holdout.push(normalized),
            }
        }
        let score = trial_score_with(trial, config.aggregation, public, holdout)?;
        trial_lines.push(TrialLine {
            trial_index: trial,
            envs,
            value: score.value,
            value_text: format_score(score.value),
        });
        trial_scores.push(score);
    }

    let score = track_score(config.track(), trial_scores)?;
    let report = ScoreReport {
        round_id: config.round_id.to_string(),
        submission_id: submission_id.to_string(),
        track: config.track(),
        aggregation: config.aggregation,
        normalization_formula: NORMALIZATION_FORMULA.to_string(),
        trial_formula: config.aggregation.formula_id().to_string(),
        track_formula: TRACK_FORMULA.to_string(),
        trials: trial_lines,
        track_value: score.value,
        track_value_text: format_score(score.value),
    };
    Ok(TrackEntry { score, report, failures })
}

/// Scores every submission appearing in `results`.
pub fn score_results(
    config: &RoundConfig,
    specs: &BTreeMap<String, EnvSpec>,
    results: &[EvaluationResult],
) -> Result<BTreeMap<String, TrackEntry>, ScoringError> {
    let mut by_sub: BTreeMap<&str, Vec<&EvaluationResult>> = BTreeMap::new();
    for r in results {
        by_sub.entry(r.submission_id.as_str()).or_default().push(r);
    }
    by_sub.into_iter().map(|(id, rs)| Ok((id.to_string(), score_submission(config, specs, id, &rs)?))).collect()
}

/// Plans, executes and scores a round. `on_result` sees each chain result
/// as soon as it completes (for persistence).
pub fn run_track(
    config: &RoundConfig,
    submissions: &[Submission],
    envs: &EnvRegistry,
    opts: &ExecOptions,
    mut on_result: impl FnMut(&EvaluationResult),
) -> Result<TrackRun, PlanError> {
    let plan = plan_round(config, submissions, envs)?;
    let mut run = TrackRun::default();
    execute_streaming(&plan, opts, |event| match event {
        ExecEvent::Job(j) => run.jobs.push(j),
        ExecEvent::Result(r) => {
            on_result(&r);
            run.results.push(r);
        }
    });
    run.jobs.sort_by_key(|j| j.job_id);
    run.results.sort_by(|a, b| a.key().cmp(&b.key()));
    let mut entries =
        score_results(config, &plan.specs, &run.results).map_err(|e| PlanError::InvalidConfig(e.to_string()))?;
    for sub in submissions {
        if !entries.contains_key(&sub.id) {
            let entry = score_submission(config, &plan.specs, &sub.id, &[])
                .map_err(|e| PlanError::InvalidConfig(e.to_string()))?;
            entries.insert(sub.id.clone(), entry);
        }
    }
    run.entries = entries;
    Ok(run)
}
