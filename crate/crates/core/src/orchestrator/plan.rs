//! Job plans: one Train → Rollout chain per (submission, env, trial).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::RoundConfig;
use crate::envcore::{EnvRegistry, EnvSpec};
use crate::registry::Submission;

pub type JobId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum JobKind {
    Train,
    Rollout,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Job {
    pub id: JobId,
    pub kind: JobKind,
    pub submission_id: String,
    pub env_id: String,
    pub trial: u32,
    pub deps: Vec<JobId>,
}

#[derive(Debug, Error, PartialEq)]
pub enum PlanError {
    #[error("unknown environment `{0}`")]
    UnknownEnv(String),
    #[error("no submissions to evaluate")]
    NoSubmissions,
    #[error("duplicate submission id `{0}`")]
    DuplicateSubmission(String),
    #[error("invalid round config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone)]
pub struct JobPlan {
    pub config: RoundConfig,
    /// Specs resolved at planning time, keyed by env id.
    pub specs: BTreeMap<String, EnvSpec>,
    pub submissions: BTreeMap<String, Submission>,
    pub jobs: Vec<Job>,
}

impl JobPlan {
    pub fn job(&self, id: JobId) -> &Job {
        &self.jobs[id]
    }

    /// Dependency edges as `(dependency, dependent)` pairs.
    pub fn edges(&self) -> Vec<(JobId, JobId)> {
        self.jobs.iter().flat_map(|j| j.deps.iter().map(move |&d| (d, j.id))).collect()
    }

    pub fn count(&self, kind: JobKind) -> usize {
        self.jobs.iter().filter(|j| j.kind == kind).count()
    }

    /// Keeps only the chains of one trial index, renumbering jobs.
    pub fn only_trial(mut self, trial: u32) -> Self {
        let mut renumber = vec![None; self.jobs.len()];
        let mut kept = Vec::new();
        for job in self.jobs.drain(..) {
            if job.trial == trial {
                renumber[job.id] = Some(kept.len());
                kept.push(job);
            }
        }
        for job in &mut kept {
            job.id = renumber[job.id].expect("kept job");
            job.deps = job.deps.iter().map(|&d| renumber[d].expect("deps share the trial")).collect();
        }
        self.jobs = kept;
        self
    }

    /// Whether the jobs admit a topological order (Kahn's algorithm).
    pub fn is_acyclic(&self) -> bool {
        let n = self.jobs.len();
        let mut indegree = vec![0usize; n];
        let mut dependents = vec![Vec::new(); n];
        for (dep, job) in self.edges() {
            if dep >= n {
                return false;
            }
            indegree[job] += 1;
            dependents[dep].push(job);
        }
        let mut ready: Vec<JobId> = (0..n).filter(|&i| indegree[i] == 0).collect();
        let mut seen = 0;
        while let Some(i) = ready.pop() {
            seen += 1;
            for &j in &dependents[i] {
                indegree[j] -= 1;
                if indegree[j] == 0 {
                    ready.push(j);
                }
            }
        }
        seen == n
    }
}

pub fn plan_round(config: &RoundConfig, submissions: &[Submission], envs: &EnvRegistry) -> Result<JobPlan, PlanError> {
    config.validate().map_err(|e| PlanError::InvalidConfig(e.to_string()))?;
    let mut specs = BTreeMap::new();
    for id in config.env_ids() {
        let spec = envs.get(id).map_err(|_| PlanError::UnknownEnv(id.to_string()))?;
        specs.insert(id.to_string(), spec.clone());
    }
    if submissions.is_empty() {
        return Err(PlanError::NoSubmissions);
    }
    let mut subs = BTreeMap::new();
    for s in submissions {
        if subs.insert(s.id.clone(), s.clone()).is_some() {
            return Err(PlanError::DuplicateSubmission(s.id.clone()));
        }
    }

    let mut jobs = Vec::with_capacity(2 * submissions.len() * specs.len() * config.trials as usize);
    for sub in submissions {
        for env_id in config.env_ids() {
            for trial in 0..config.trials {
                let train = jobs.len();
                let job = |id, kind, deps| Job {
                    id,
                    kind,
                    submission_id: sub.id.clone(),
                    env_id: env_id.to_string(),
                    trial,
                    deps,
                };
                jobs.push(job(train, JobKind::Train, Vec::new()));
                jobs.push(job(train + 1, JobKind::Rollout, vec![train]));
            }
        }
    }
    Ok(JobPlan { config: config.clone(), specs, submissions: subs, jobs })
}
