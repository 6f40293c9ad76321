use serde::{Deserialize, Serialize};

use crate::budget::{BudgetPolicy, Limit};
use crate::envcore::{Action, Observation};

/// Version exchanged in `Hello`; bumped on any wire-visible change.
pub const PROTOCOL_VERSION: u32 = 1;

/// One protocol message. Serialized as `{"kind": ..., "payload": {...}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload")]
pub enum Message {
    Hello(Hello),
    PhaseStart(PhaseStart),
    ResetResult(ResetResult),
    Act(Act),
    StepOutcome(StepOutcome),
    SaveCheckpoint(SaveCheckpoint),
    CheckpointSaved(CheckpointSaved),
    PhaseComplete(PhaseComplete),
    ProtocolError(ProtocolErrorMsg),
}

impl Message {
    pub fn kind(&self) -> &'static str {
        match self {
            Message::Hello(_) => "Hello",
            Message::PhaseStart(_) => "PhaseStart",
            Message::ResetResult(_) => "ResetResult",
            Message::Act(_) => "Act",
            Message::StepOutcome(_) => "StepOutcome",
            Message::SaveCheckpoint(_) => "SaveCheckpoint",
            Message::CheckpointSaved(_) => "CheckpointSaved",
            Message::PhaseComplete(_) => "PhaseComplete",
            Message::ProtocolError(_) => "ProtocolError",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Harness,
    Agent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Training,
    Rollout,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hello {
    pub protocol_version: u32,
    pub role: Role,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseStart {
    pub phase: Phase,
    pub env_id: String,
    pub num_actions: u32,
    pub budget: BudgetPolicy,
    pub workdir: String,
    /// Where the agent writes (training) or reads (rollout) its checkpoint.
    pub checkpoint_path: String,
    /// Digest of the checkpoint handed to a rollout.
    pub checkpoint_sha256: Option<String>,
    /// Episodes the rollout will serve.
    pub rollout_levels: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResetResult {
    pub episode: u64,
    pub observation: Observation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Act {
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
    pub episode_steps: u32,
    pub budget_remaining: Limit,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SaveCheckpoint {
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointSaved {
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseComplete {
    pub initiator: Role,
    pub steps_served: u64,
    pub episodes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtocolErrorMsg {
    pub reason: String,
}
