//! Harness side of the training and rollout phases.

use std::fs;
use std::io::{self, Read};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::agent::AgentHandle;
use super::frame::FrameError;
use super::transcript::{Direction, ProtocolState, TranscriptEntry};
use super::*;
use crate::budget::{BudgetError, BudgetPolicy, BudgetedSession, Limit};
use crate::envcore::{EnvError, EnvSession, EnvSpec, LevelSeed, NUM_ACTIONS};

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("wall-clock limit exceeded")]
    WallClockExceeded,
    #[error("protocol violation: {0}")]
    ProtocolViolation(String),
    #[error("agent crashed (exit code {code:?})")]
    AgentCrashed { code: Option<i32> },
    #[error("missing checkpoint: {0}")]
    MissingCheckpoint(String),
    #[error("checkpoint digest mismatch: expected {expected}, found {actual}")]
    ChecksumMismatch { expected: String, actual: String },
    #[error("checkpoint provenance mismatch: {0}")]
    ProvenanceMismatch(String),
    #[error("environment: {0}")]
    Env(#[from] EnvError),
    #[error("agent could not be started: {0}")]
    SpawnFailed(String),
    #[error("infrastructure: {0}")]
    Infrastructure(String),
}

impl SessionError {
    /// Faults of the harness host rather than the agent; eligible for retry.
    pub fn is_infrastructure(&self) -> bool {
        matches!(self, SessionError::Infrastructure(_))
    }

    /// Short stable label used in results and reports.
    pub fn label(&self) -> &'static str {
        match self {
            SessionError::WallClockExceeded => "WallClockExceeded",
            SessionError::ProtocolViolation(_) => "ProtocolViolation",
            SessionError::AgentCrashed { .. } => "AgentCrashed",
            SessionError::MissingCheckpoint(_) => "MissingCheckpoint",
            SessionError::ChecksumMismatch { .. } => "ChecksumMismatch",
            SessionError::ProvenanceMismatch(_) => "ProvenanceMismatch",
            SessionError::Env(_) => "EnvError",
            SessionError::SpawnFailed(_) => "SpawnFailed",
            SessionError::Infrastructure(_) => "Infrastructure",
        }
    }
}

/// Which training run produced a checkpoint.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Provenance {
    pub submission_id: String,
    pub env_id: String,
    pub trial: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointArtifact {
    pub path: PathBuf,
    pub sha256: String,
    pub size_bytes: u64,
    pub produced_by: Provenance,
}

pub fn sha256_file(path: &Path) -> io::Result<(String, u64)> {
    let mut file = fs::File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    let mut size = 0u64;
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
        size += n as u64;
    }
    Ok((hex::encode(hasher.finalize()), size))
}

impl CheckpointArtifact {
    /// Digests the file as it is now.
    pub fn record(path: &Path, produced_by: Provenance) -> io::Result<Self> {
        let (sha256, size_bytes) = sha256_file(path)?;
        Ok(CheckpointArtifact { path: path.to_path_buf(), sha256, size_bytes, produced_by })
    }

    pub fn verify(&self) -> Result<(), SessionError> {
        let (actual, _) = sha256_file(&self.path)
            .map_err(|e| SessionError::MissingCheckpoint(format!("{}: {e}", self.path.display())))?;
        if actual != self.sha256 {
            return Err(SessionError::ChecksumMismatch { expected: self.sha256.clone(), actual });
        }
        Ok(())
    }

    /// Copies the artifact into `dir/<sha256>` and returns the relocated record.
    pub fn store_in(&self, dir: &Path) -> io::Result<Self> {
        fs::create_dir_all(dir)?;
        let dest = dir.join(&self.sha256);
        if !dest.exists() {
            let tmp = dir.join(format!(".{}.tmp{}", self.sha256, std::process::id()));
            fs::copy(&self.path, &tmp)?;
            fs::rename(&tmp, &dest)?;
        }
        Ok(CheckpointArtifact { path: dest, ..self.clone() })
    }
}

pub struct TrainingRequest<'a> {
    pub spec: &'a EnvSpec,
    pub policy: &'a BudgetPolicy,
    pub workdir: &'a Path,
    pub checkpoint_path: &'a Path,
    /// Seeds the training-level sampler.
    pub level_rng_seed: u64,
    pub provenance: Provenance,
    pub record_transcript: bool,
}

#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    pub artifact: CheckpointArtifact,
    pub steps_served: u64,
    pub episodes: u64,
    pub level_seeds: Vec<LevelSeed>,
    pub transcript: Vec<TranscriptEntry>,
    pub elapsed: Duration,
}

pub struct RolloutRequest<'a> {
    pub spec: &'a EnvSpec,
    pub artifact: &'a CheckpointArtifact,
    /// Expected producer; checked against the artifact's record.
    pub provenance: &'a Provenance,
    pub n_levels: u32,
    pub eval_rng_seed: u64,
    pub workdir: &'a Path,
    pub wall_clock_limit: Duration,
    pub record_transcript: bool,
}

#[derive(Debug, Clone)]
pub struct RolloutOutcome {
    pub returns: Vec<f64>,
    pub level_seeds: Vec<LevelSeed>,
    pub steps_served: u64,
    pub transcript: Vec<TranscriptEntry>,
    pub elapsed: Duration,
}

/// Rollout levels: `n` draws with replacement from the full seed space.
pub fn sample_rollout_levels(eval_rng_seed: u64, n: u32) -> Vec<LevelSeed> {
    let mut rng = ChaCha8Rng::seed_from_u64(eval_rng_seed);
    (0..n).map(|_| LevelSeed(rng.gen())).collect()
}

/// Drives one session: validates each message against the state machine
/// and keeps the optional transcript.
struct Driver<'a> {
    agent: &'a mut dyn AgentHandle,
    state: ProtocolState,
    transcript: Vec<TranscriptEntry>,
    record: bool,
    phase: Phase,
}

impl<'a> Driver<'a> {
    fn new(agent: &'a mut dyn AgentHandle, phase: Phase, record: bool) -> Self {
        Driver { agent, state: ProtocolState::new(phase), transcript: Vec::new(), record, phase }
    }

    fn send(&mut self, message: Message) -> Result<(), SessionError> {
        self.state
            .advance(Direction::ToAgent, &message)
            .map_err(|e| SessionError::Infrastructure(format!("harness state machine: {e}")))?;
        let sent = self.agent.send(&message);
        if self.record {
            self.transcript.push(TranscriptEntry { direction: Direction::ToAgent, message });
        }
        match sent {
            Ok(()) => Ok(()),
            // A closed pipe means the agent is gone; the exit status tells why.
            Err(FrameError::Io(_)) => Err(self.agent_gone()),
            Err(e) => Err(SessionError::Infrastructure(e.to_string())),
        }
    }

    fn recv(&mut self) -> Result<Message, SessionError> {
        let message = match self.agent.recv() {
            Ok(Some(m)) => m,
            Ok(None) | Err(FrameError::Io(_)) => return Err(self.agent_gone()),
            Err(e) => {
                if self.agent.timed_out() {
                    return Err(SessionError::WallClockExceeded);
                }
                return Err(self.violation(e.to_string()));
            }
        };
        if self.record {
            self.transcript.push(TranscriptEntry { direction: Direction::FromAgent, message: message.clone() });
        }
        if let Message::ProtocolError(p) = &message {
            return Err(SessionError::ProtocolViolation(format!("agent reported: {}", p.reason)));
        }
        if let Err(e) = self.state.advance(Direction::FromAgent, &message) {
            return Err(self.violation(e));
        }
        Ok(message)
    }

    fn violation(&mut self, reason: String) -> SessionError {
        let notice = Message::ProtocolError(ProtocolErrorMsg { reason: reason.clone() });
        let _ = self.agent.send(&notice);
        if self.record {
            self.transcript.push(TranscriptEntry { direction: Direction::ToAgent, message: notice });
        }
        SessionError::ProtocolViolation(reason)
    }

    /// Classifies an agent that stopped talking.
    fn agent_gone(&mut self) -> SessionError {
        let exit = self.agent.finish();
        if self.agent.timed_out() {
            return SessionError::WallClockExceeded;
        }
        match exit {
            Err(e) => SessionError::Infrastructure(format!("waiting for agent: {e}")),
            Ok(info) if !info.success => SessionError::AgentCrashed { code: info.code },
            Ok(_) if self.phase == Phase::Training => {
                SessionError::MissingCheckpoint("agent exited before saving a checkpoint".into())
            }
            Ok(_) => SessionError::ProtocolViolation("agent exited before the rollout completed".into()),
        }
    }

    fn handshake(&mut self, start: PhaseStart) -> Result<(), SessionError> {
        self.send(Message::Hello(Hello { protocol_version: PROTOCOL_VERSION, role: Role::Harness }))?;
        match self.recv()? {
            Message::Hello(h) if h.protocol_version == PROTOCOL_VERSION => {}
            Message::Hello(h) => {
                return Err(self.violation(format!(
                    "protocol version {} not supported (harness speaks {PROTOCOL_VERSION})",
                    h.protocol_version
                )))
            }
            other => return Err(self.violation(format!("expected Hello, got {}", other.kind()))),
        }
        self.send(Message::PhaseStart(start))
    }

    fn expect_act(&mut self, message: Message) -> Result<u32, SessionError> {
        match message {
            Message::Act(Act { action }) if action < NUM_ACTIONS => Ok(action),
            Message::Act(Act { action }) => Err(self.violation(format!("action {action} out of range"))),
            other => Err(self.violation(format!("expected Act, got {}", other.kind()))),
        }
    }

    /// Waits for the agent to exit after the closing `PhaseComplete`.
    fn close(&mut self) {
        match self.agent.finish() {
            Ok(info) if !info.success => {
                log::warn!("agent exited with {:?} after PhaseComplete", info.code)
            }
            Err(e) => log::warn!("waiting for agent after PhaseComplete: {e}"),
            _ => {}
        }
    }
}

fn path_string(path: &Path) -> String {
    path.to_string_lossy().into_owned()
}

/// Serves a training phase through a [`BudgetedSession`] and returns the
/// checkpoint the agent saved.
pub fn run_training_phase(
    agent: &mut dyn AgentHandle,
    req: &TrainingRequest<'_>,
) -> Result<TrainingOutcome, SessionError> {
    let started = Instant::now();
    req.policy.validate().map_err(|e| SessionError::Infrastructure(e.to_string()))?;
    let spec = req.spec.clone();
    let mut budgeted = BudgetedSession::wrap(Box::new(move |seed| EnvSession::new(&spec, seed)), req.policy.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(req.level_rng_seed);
    let mut level_seeds = Vec::new();
    let mut driver = Driver::new(agent, Phase::Training, req.record_transcript);
    let checkpoint = path_string(req.checkpoint_path);

    driver.handshake(PhaseStart {
        phase: Phase::Training,
        env_id: req.spec.env_id.clone(),
        num_actions: NUM_ACTIONS,
        budget: req.policy.clone(),
        workdir: path_string(req.workdir),
        checkpoint_path: checkpoint.clone(),
        checkpoint_sha256: None,
        rollout_levels: None,
    })?;

    let budget_err = |e: BudgetError| match e {
        BudgetError::Env(env) => SessionError::Env(env),
        other => SessionError::Infrastructure(other.to_string()),
    };
    let mut episodes = 0u64;
    let mut save_requested = false;

    if budgeted.is_exhausted() {
        driver.send(Message::SaveCheckpoint(SaveCheckpoint { path: checkpoint.clone() }))?;
        save_requested = true;
    } else {
        let (seed, observation) = budgeted.reset_training(&mut rng).map_err(budget_err)?;
        level_seeds.push(seed);
        driver.send(Message::ResetResult(ResetResult { episode: episodes, observation }))?;
    }

    loop {
        let message = driver.recv()?;
        match message {
            Message::CheckpointSaved(saved) => {
                if saved.path != checkpoint {
                    return Err(driver.violation(format!("checkpoint saved to {}, expected {checkpoint}", saved.path)));
                }
                break;
            }
            Message::PhaseComplete(_) => {
                driver.send(Message::SaveCheckpoint(SaveCheckpoint { path: checkpoint.clone() }))?;
                save_requested = true;
            }
            other => {
                debug_assert!(!save_requested);
                let action = driver.expect_act(other)?;
                let result = budgeted.step(action).map_err(budget_err)?;
                let exhausted = budgeted.is_exhausted();
                driver.send(Message::StepOutcome(StepOutcome {
                    observation: result.observation,
                    reward: result.reward,
                    done: result.done,
                    episode_steps: result.episode_steps,
                    budget_remaining: budgeted.remaining(),
                }))?;
                if result.done {
                    episodes += 1;
                }
                if exhausted {
                    driver.send(Message::SaveCheckpoint(SaveCheckpoint { path: checkpoint.clone() }))?;
                    save_requested = true;
                } else if result.done {
                    let (seed, observation) = budgeted.reset_training(&mut rng).map_err(budget_err)?;
                    level_seeds.push(seed);
                    driver.send(Message::ResetResult(ResetResult { episode: episodes, observation }))?;
                }
            }
        }
    }

    let artifact = CheckpointArtifact::record(req.checkpoint_path, req.provenance.clone())
        .map_err(|e| SessionError::MissingCheckpoint(format!("{checkpoint}: {e}")))?;
    let steps_served = budgeted.steps_used();
    driver.send(Message::PhaseComplete(PhaseComplete { initiator: Role::Harness, steps_served, episodes }))?;
    driver.close();
    Ok(TrainingOutcome {
        artifact,
        steps_served,
        episodes,
        level_seeds,
        transcript: driver.transcript,
        elapsed: started.elapsed(),
    })
}

/// Runs one episode per sampled level and returns the raw returns in
/// sampling order.
pub fn run_rollout_phase(
    agent: &mut dyn AgentHandle,
    req: &RolloutRequest<'_>,
) -> Result<RolloutOutcome, SessionError> {
    let started = Instant::now();
    if &req.artifact.produced_by != req.provenance {
        return Err(SessionError::ProvenanceMismatch(format!(
            "artifact produced by {:?}, rollout is for {:?}",
            req.artifact.produced_by, req.provenance
        )));
    }
    req.artifact.verify()?;
    let level_seeds = sample_rollout_levels(req.eval_rng_seed, req.n_levels);
    let mut driver = Driver::new(agent, Phase::Rollout, req.record_transcript);

    driver.handshake(PhaseStart {
        phase: Phase::Rollout,
        env_id: req.spec.env_id.clone(),
        num_actions: NUM_ACTIONS,
        budget: BudgetPolicy::new(Limit::Unlimited, Limit::Unlimited, req.wall_clock_limit),
        workdir: path_string(req.workdir),
        checkpoint_path: path_string(&req.artifact.path),
        checkpoint_sha256: Some(req.artifact.sha256.clone()),
        rollout_levels: Some(req.n_levels),
    })?;

    let mut returns = Vec::with_capacity(level_seeds.len());
    let mut steps_served = 0u64;
    for (episode, &seed) in level_seeds.iter().enumerate() {
        let mut env = EnvSession::new(req.spec, seed)?;
        driver.send(Message::ResetResult(ResetResult { episode: episode as u64, observation: env.observe() }))?;
        loop {
            let message = driver.recv()?;
            let action = driver.expect_act(message)?;
            let result = env.step(action)?;
            steps_served += 1;
            let done = result.done;
            driver.send(Message::StepOutcome(StepOutcome {
                observation: result.observation,
                reward: result.reward,
                done,
                episode_steps: result.episode_steps,
                budget_remaining: Limit::Unlimited,
            }))?;
            if done {
                break;
            }
        }
        returns.push(env.episode_return());
    }

    driver.send(Message::PhaseComplete(PhaseComplete {
        initiator: Role::Harness,
        steps_served,
        episodes: returns.len() as u64,
    }))?;
    driver.close();
    Ok(RolloutOutcome { returns, level_seeds, steps_served, transcript: driver.transcript, elapsed: started.elapsed() })
}
