//! Round planning and execution.
//!
//! A round expands into one Train → Rollout chain per (submission, env,
//! trial). Chains run on a bounded worker pool; each produces one
//! [`EvaluationResult`], and per-trial scores fold into a track score.

mod config;
mod execute;
mod plan;
mod track;

pub use config::{
    ConfigError, RoundConfig, RoundId, FULL_ROLLOUT_LEVELS, FULL_TIMESTEP_BUDGET, FULL_WALL_CLOCK,
    GENERALIZATION_LEVELS,
};
pub use execute::{
    evaluation_seed, execute, execute_streaming, training_level_seed, EvaluationResult, ExecEvent, ExecOptions,
    Execution, FailureReason, JobOutcome, PhaseTimings, ResultStatus,
};
pub use plan::{plan_round, Job, JobId, JobKind, JobPlan, PlanError};
pub use track::{run_track, score_results, score_submission, TrackEntry, TrackRun};

/// Worker count used when neither a flag nor the environment says otherwise.
pub const DEFAULT_WORKERS: usize = 4;
/// Environment variable overriding [`DEFAULT_WORKERS`].
pub const WORKERS_ENV: &str = "PROCBENCH_WORKERS";

pub fn default_workers() -> usize {
    std::env::var(WORKERS_ENV).ok().and_then(|v| v.parse().ok()).filter(|&n| n > 0).unwrap_or(DEFAULT_WORKERS)
}
