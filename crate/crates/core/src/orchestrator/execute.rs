//! Plan execution on a bounded worker pool.
//!
//! The scheduler (the calling thread) owns all plan state. Workers receive
//! one task at a time and report back over a single channel; a Rollout task
//! is only created once its Train job's checkpoint has been digested and
//! stored.

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::fs;
use std::io;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::thread;
use std::time::{Duration, Instant};

use crossbeam_channel::{unbounded, Receiver, Sender};
use serde::{Deserialize, Serialize};

use super::plan::{Job, JobId, JobKind, JobPlan};
use crate::protocol::{
    run_rollout_phase, run_training_phase, CheckpointArtifact, Entrypoint, ProcessAgent, Provenance, RolloutRequest,
    SessionError, TrainingRequest,
};
use crate::scoring::{failed_return, mean_return, normalized_return, NormalizedReturn};
use crate::seeding::derive_seed;

#[derive(Debug, Clone)]
pub struct ExecOptions {
    pub workers: usize,
    /// Scratch space; each job gets its own directory below it.
    pub work_root: PathBuf,
    /// Content-addressed checkpoint store (`<dir>/<sha256>`).
    pub artifacts_dir: PathBuf,
    /// Keep job directories of successful jobs (failed ones are always kept).
    pub keep_workdirs: bool,
}

impl ExecOptions {
    pub fn new(workers: usize, root: &Path) -> Self {
        ExecOptions {
            workers,
            work_root: root.join("work"),
            artifacts_dir: root.join("artifacts"),
            keep_workdirs: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureReason {
    pub phase: JobKind,
    /// Stable label, e.g. `AgentCrashed` or `DependencyFailed`.
    pub label: String,
    pub detail: String,
}

impl fmt::Display for FailureReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let phase = match self.phase {
            JobKind::Train => "training",
            JobKind::Rollout => "rollout",
        };
        write!(f, "{} during {phase}: {}", self.label, self.detail)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ResultStatus {
    Ok,
    Failed(FailureReason),
}

impl ResultStatus {
    pub fn is_ok(&self) -> bool {
        matches!(self, ResultStatus::Ok)
    }

    pub fn failure(&self) -> Option<&FailureReason> {
        match self {
            ResultStatus::Ok => None,
            ResultStatus::Failed(r) => Some(r),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimings {
    pub train_secs: Option<f64>,
    pub rollout_secs: Option<f64>,
}

/// Outcome of one Train → Rollout chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationResult {
    pub round_id: String,
    pub submission_id: String,
    pub env_id: String,
    pub trial: u32,
    pub raw_returns: Vec<f64>,
    pub normalized: NormalizedReturn,
    pub status: ResultStatus,
    pub timings: PhaseTimings,
    pub checkpoint_sha256: Option<String>,
    pub eval_seed: u64,
    pub train_steps: u64,
}

impl EvaluationResult {
    pub fn key(&self) -> (&str, &str, u32) {
        (&self.submission_id, &self.env_id, self.trial)
    }

    /// Copy with timings cleared, for comparisons across runs.
    pub fn without_timings(&self) -> Self {
        EvaluationResult { timings: PhaseTimings::default(), ..self.clone() }
    }
}

/// Per-job record. Times are seconds since the start of the execution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobOutcome {
    pub job_id: JobId,
    pub kind: JobKind,
    pub submission_id: String,
    pub env_id: String,
    pub trial: u32,
    pub attempts: u32,
    pub status: ResultStatus,
    pub started_at: f64,
    pub finished_at: f64,
    pub checkpoint_sha256: Option<String>,
}

#[derive(Debug, Clone)]
pub enum ExecEvent {
    Job(JobOutcome),
    Result(EvaluationResult),
}

#[derive(Debug, Clone, Default)]
pub struct Execution {
    /// Sorted by (submission, env, trial).
    pub results: Vec<EvaluationResult>,
    /// Sorted by job id.
    pub jobs: Vec<JobOutcome>,
}

/// Seed for the training-level sampler of one chain.
pub fn training_level_seed(plan: &JobPlan, job: &Job) -> u64 {
    chain_seed(b"train-levels", plan, job)
}

/// Seed for the rollout-level sampler of one chain.
pub fn evaluation_seed(plan: &JobPlan, job: &Job) -> u64 {
    chain_seed(b"eval", plan, job)
}

fn chain_seed(tag: &[u8], plan: &JobPlan, job: &Job) -> u64 {
    derive_seed(&[
        tag,
        plan.config.round_id.as_str().as_bytes(),
        job.submission_id.as_bytes(),
        job.env_id.as_bytes(),
        &job.trial.to_le_bytes(),
        &plan.config.seed.to_le_bytes(),
    ])
}

/// Runs the plan and collects every job outcome and chain result.
pub fn execute(plan: &JobPlan, opts: &ExecOptions) -> Execution {
    let mut out = Execution::default();
    execute_streaming(plan, opts, |event| match event {
        ExecEvent::Job(j) => out.jobs.push(j),
        ExecEvent::Result(r) => out.results.push(r),
    });
    out.jobs.sort_by_key(|j| j.job_id);
    out.results.sort_by(|a, b| a.key().cmp(&b.key()));
    out
}

struct Task {
    job: JobId,
    attempt: u32,
    input: Option<CheckpointArtifact>,
}

enum Product {
    Trained { artifact: CheckpointArtifact, steps: u64 },
    RolledOut { returns: Vec<f64> },
}

struct Done {
    job: JobId,
    attempt: u32,
    started: Duration,
    finished: Duration,
    result: Result<Product, SessionError>,
}

#[derive(Default)]
struct ChainState {
    train_secs: Option<f64>,
    train_steps: u64,
    artifact: Option<CheckpointArtifact>,
}

impl ChainState {
    fn digest(&self) -> Option<String> {
        self.artifact.as_ref().map(|a| a.sha256.clone())
    }
}

/// Runs the plan, handing each event to `sink` as it happens. Nothing is
/// retained beyond the chains currently in flight.
pub fn execute_streaming(plan: &JobPlan, opts: &ExecOptions, mut sink: impl FnMut(ExecEvent)) {
    let workers = opts.workers.max(1);
    let epoch = Instant::now();
    let mut dependents: Vec<Vec<JobId>> = vec![Vec::new(); plan.jobs.len()];
    for (dep, job) in plan.edges() {
        dependents[dep].push(job);
    }

    let (task_tx, task_rx) = unbounded::<Task>();
    let (done_tx, done_rx) = unbounded::<Done>();

    thread::scope(|scope| {
        for _ in 0..workers {
            let rx = task_rx.clone();
            let tx = done_tx.clone();
            scope.spawn(move || worker(plan, opts, epoch, rx, tx));
        }
        drop(done_tx);

        let mut scheduler = Scheduler {
            plan,
            epoch,
            dependents,
            ready: plan
                .jobs
                .iter()
                .filter(|j| j.deps.is_empty())
                .map(|j| Task { job: j.id, attempt: 0, input: None })
                .collect(),
            chains: HashMap::new(),
            sink: &mut sink,
        };
        let mut in_flight = 0usize;
        loop {
            while in_flight < workers {
                let Some(task) = scheduler.ready.pop_front() else {
                    break;
                };
                task_tx.send(task).expect("workers alive while scheduling");
                in_flight += 1;
            }
            if in_flight == 0 {
                break;
            }
            let done = done_rx.recv().expect("a worker reports every task");
            in_flight -= 1;
            scheduler.complete(done);
        }
        drop(task_tx);
    });
}

struct Scheduler<'a, F: FnMut(ExecEvent)> {
    plan: &'a JobPlan,
    epoch: Instant,
    dependents: Vec<Vec<JobId>>,
    ready: VecDeque<Task>,
    chains: HashMap<JobId, ChainState>,
    sink: &'a mut F,
}

impl<F: FnMut(ExecEvent)> Scheduler<'_, F> {
    fn complete(&mut self, done: Done) {
        let job = self.plan.job(done.job);
        let result = match done.result {
            Err(e) if e.is_infrastructure() && done.attempt == 0 => {
                log::warn!(
                    "job {} ({}/{}/{}) hit an infrastructure fault, retrying: {e}",
                    job.id,
                    job.submission_id,
                    job.env_id,
                    job.trial
                );
                let input = match job.kind {
                    JobKind::Rollout => self.chains.get(&job.deps[0]).and_then(|c| c.artifact.clone()),
                    JobKind::Train => None,
                };
                self.ready.push_back(Task { job: job.id, attempt: 1, input });
                return;
            }
            other => other,
        };
        let secs = (done.finished - done.started).as_secs_f64();
        let outcome = |status: ResultStatus, digest: Option<String>| JobOutcome {
            job_id: job.id,
            kind: job.kind,
            submission_id: job.submission_id.clone(),
            env_id: job.env_id.clone(),
            trial: job.trial,
            attempts: done.attempt + 1,
            status,
            started_at: done.started.as_secs_f64(),
            finished_at: done.finished.as_secs_f64(),
            checkpoint_sha256: digest,
        };

        match (job.kind, result) {
            (JobKind::Train, Ok(Product::Trained { artifact, steps })) => {
                (self.sink)(ExecEvent::Job(outcome(ResultStatus::Ok, Some(artifact.sha256.clone()))));
                for &d in &self.dependents[job.id] {
                    self.ready.push_front(Task { job: d, attempt: 0, input: Some(artifact.clone()) });
                }
                self.chains.insert(
                    job.id,
                    ChainState { train_secs: Some(secs), train_steps: steps, artifact: Some(artifact) },
                );
            }
            (JobKind::Train, Err(e)) => {
                let reason = failure(JobKind::Train, &e);
                (self.sink)(ExecEvent::Job(outcome(ResultStatus::Failed(reason.clone()), None)));
                let chain = ChainState { train_secs: Some(secs), ..ChainState::default() };
                for &d in &self.dependents[job.id].clone() {
                    let dep = self.plan.job(d);
                    let now = self.epoch.elapsed().as_secs_f64();
                    (self.sink)(ExecEvent::Job(JobOutcome {
                        job_id: d,
                        kind: dep.kind,
                        submission_id: dep.submission_id.clone(),
                        env_id: dep.env_id.clone(),
                        trial: dep.trial,
                        attempts: 0,
                        status: ResultStatus::Failed(FailureReason {
                            phase: dep.kind,
                            label: "DependencyFailed".into(),
                            detail: format!("training job {} failed: {}", job.id, reason.label),
                        }),
                        started_at: now,
                        finished_at: now,
                        checkpoint_sha256: None,
                    }));
                    self.emit_result(dep, &chain, None, Err(reason.clone()));
                }
            }
            (JobKind::Rollout, Ok(Product::RolledOut { returns })) => {
                let chain = self.chains.remove(&job.deps[0]).unwrap_or_default();
                (self.sink)(ExecEvent::Job(outcome(ResultStatus::Ok, chain.digest())));
                self.emit_result(job, &chain, Some(secs), Ok(returns));
            }
            (JobKind::Rollout, Err(e)) => {
                let chain = self.chains.remove(&job.deps[0]).unwrap_or_default();
                let reason = failure(JobKind::Rollout, &e);
                (self.sink)(ExecEvent::Job(outcome(ResultStatus::Failed(reason.clone()), chain.digest())));
                self.emit_result(job, &chain, Some(secs), Err(reason));
            }
            (kind, Ok(_)) => unreachable!("{kind:?} job produced the wrong product"),
        }
    }

    fn emit_result(
        &mut self,
        rollout: &Job,
        chain: &ChainState,
        rollout_secs: Option<f64>,
        returns: Result<Vec<f64>, FailureReason>,
    ) {
        let spec = &self.plan.specs[&rollout.env_id];
        let expected = self.plan.config.rollout_levels as usize;
        let returns = returns.and_then(|r| {
            if r.len() == expected {
                Ok(r)
            } else {
                Err(FailureReason {
                    phase: JobKind::Rollout,
                    label: "IncompleteRollout".into(),
                    detail: format!("{} returns for {expected} levels", r.len()),
                })
            }
        });
        let (raw_returns, normalized, status) = match returns {
            Ok(r) => {
                let mean = mean_return(&r).expect("at least one rollout level");
                match normalized_return(&spec.env_id, mean, spec.r_min, spec.r_max) {
                    Ok(n) => (r, n, ResultStatus::Ok),
                    Err(e) => (
                        r,
                        failed_return(&spec.env_id, spec.r_min, spec.r_max),
                        ResultStatus::Failed(FailureReason {
                            phase: JobKind::Rollout,
                            label: "Scoring".into(),
                            detail: e.to_string(),
                        }),
                    ),
                }
            }
            Err(reason) => {
                (Vec::new(), failed_return(&spec.env_id, spec.r_min, spec.r_max), ResultStatus::Failed(reason))
            }
        };
        (self.sink)(ExecEvent::Result(EvaluationResult {
            round_id: self.plan.config.round_id.to_string(),
            submission_id: rollout.submission_id.clone(),
            env_id: rollout.env_id.clone(),
            trial: rollout.trial,
            raw_returns,
            normalized,
            status,
            timings: PhaseTimings { train_secs: chain.train_secs, rollout_secs },
            checkpoint_sha256: chain.digest(),
            eval_seed: evaluation_seed(self.plan, rollout),
            train_steps: chain.train_steps,
        }));
    }
}

fn failure(phase: JobKind, e: &SessionError) -> FailureReason {
    FailureReason { phase, label: e.label().to_string(), detail: e.to_string() }
}

fn provenance(job: &Job) -> Provenance {
    Provenance { submission_id: job.submission_id.clone(), env_id: job.env_id.clone(), trial: job.trial }
}

fn worker(plan: &JobPlan, opts: &ExecOptions, epoch: Instant, tasks: Receiver<Task>, done: Sender<Done>) {
    for task in tasks.iter() {
        let started = epoch.elapsed();
        let result = panic::catch_unwind(AssertUnwindSafe(|| run_task(plan, opts, &task))).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "worker panicked".into());
            Err(SessionError::Infrastructure(msg))
        });
        let finished = epoch.elapsed();
        if done.send(Done { job: task.job, attempt: task.attempt, started, finished, result }).is_err() {
            break;
        }
    }
}

fn infra(context: &str) -> impl FnOnce(io::Error) -> SessionError + '_ {
    move |e| SessionError::Infrastructure(format!("{context}: {e}"))
}

fn job_dir(plan: &JobPlan, opts: &ExecOptions, job: &Job, attempt: u32) -> PathBuf {
    let phase = match job.kind {
        JobKind::Train => "train",
        JobKind::Rollout => "rollout",
    };
    opts.work_root
        .join(plan.config.round_id.as_str())
        .join(&job.submission_id)
        .join(&job.env_id)
        .join(format!("t{}-{phase}-a{attempt}", job.trial))
}

fn fresh_dir(path: &Path) -> Result<(), SessionError> {
    if path.exists() {
        fs::remove_dir_all(path).map_err(infra("clearing job directory"))?;
    }
    fs::create_dir_all(path).map_err(infra("creating job directory"))
}

fn spawn(ep: &Entrypoint, dir: &Path, checkpoint: &Path, limit: Duration) -> Result<ProcessAgent, SessionError> {
    let args = [dir.to_string_lossy().into_owned(), checkpoint.to_string_lossy().into_owned()];
    let args: Vec<&str> = args.iter().map(String::as_str).collect();
    ProcessAgent::spawn(ep, &args, limit, Some(&dir.join("agent.stderr"))).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound | io::ErrorKind::PermissionDenied => {
            SessionError::SpawnFailed(format!("{}: {e}", ep.program))
        }
        _ => SessionError::Infrastructure(format!("spawning {}: {e}", ep.program)),
    })
}

fn run_task(plan: &JobPlan, opts: &ExecOptions, task: &Task) -> Result<Product, SessionError> {
    let job = plan.job(task.job);
    let spec = &plan.specs[&job.env_id];
    let submission = &plan.submissions[&job.submission_id];
    let dir = job_dir(plan, opts, job, task.attempt);
    fresh_dir(&dir)?;
    let limit = plan.config.wall_clock_limit;

    let product = match job.kind {
        JobKind::Train => {
            let checkpoint = dir.join("checkpoint");
            let policy = plan.config.policy();
            let mut agent = spawn(&submission.train_entrypoint(), &dir, &checkpoint, limit)?;
            let outcome = run_training_phase(
                &mut agent,
                &TrainingRequest {
                    spec,
                    policy: &policy,
                    workdir: &dir,
                    checkpoint_path: &checkpoint,
                    level_rng_seed: training_level_seed(plan, job),
                    provenance: provenance(job),
                    record_transcript: false,
                },
            )?;
            drop(agent);
            let artifact = outcome.artifact.store_in(&opts.artifacts_dir).map_err(infra("storing checkpoint"))?;
            Product::Trained { artifact, steps: outcome.steps_served }
        }
        JobKind::Rollout => {
            let artifact =
                task.input.as_ref().ok_or_else(|| SessionError::Infrastructure("rollout without checkpoint".into()))?;
            let mut agent = spawn(&submission.rollout_entrypoint(), &dir, &artifact.path, limit)?;
            let outcome = run_rollout_phase(
                &mut agent,
                &RolloutRequest {
                    spec,
                    artifact,
                    provenance: &provenance(job),
                    n_levels: plan.config.rollout_levels,
                    eval_rng_seed: evaluation_seed(plan, job),
                    workdir: &dir,
                    wall_clock_limit: limit,
                    record_transcript: false,
                },
            )?;
            Product::RolledOut { returns: outcome.returns }
        }
    };
    if !opts.keep_workdirs {
        let _ = fs::remove_dir_all(&dir);
    }
    Ok(product)
}
