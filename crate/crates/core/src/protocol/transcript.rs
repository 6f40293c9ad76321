//! Session state machine and transcripts.
//!
//! A session runs `Hello(harness) -> Hello(agent) -> PhaseStart`, then
//! alternates harness observations (`ResetResult`, `StepOutcome`) with
//! agent `Act`s. Training ends with `SaveCheckpoint -> CheckpointSaved ->
//! PhaseComplete`; the agent may ask for that ending early by sending its
//! own `PhaseComplete` in place of an `Act`. Rollout ends with the
//! harness's `PhaseComplete`. A `ProtocolError` from either side aborts.

use serde::{Deserialize, Serialize};

use super::{Message, Phase, Role};
use crate::budget::Limit;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    ToAgent,
    FromAgent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub direction: Direction,
    pub message: Message,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum State {
    Init,
    AwaitAgentHello,
    AwaitPhaseStart,
    HarnessTurn,
    AwaitAct,
    AwaitOutcome,
    AwaitSaveRequest,
    AwaitSaved,
    AwaitClose,
    Done,
    Aborted,
}

/// Tracks one session; rejects any message the current state does not allow.
#[derive(Debug, Clone)]
pub struct ProtocolState {
    phase: Phase,
    state: State,
    step_outcomes: u64,
}

impl ProtocolState {
    pub fn new(phase: Phase) -> Self {
        ProtocolState { phase, state: State::Init, step_outcomes: 0 }
    }

    pub fn is_done(&self) -> bool {
        self.state == State::Done
    }

    pub fn is_aborted(&self) -> bool {
        self.state == State::Aborted
    }

    pub fn step_outcomes(&self) -> u64 {
        self.step_outcomes
    }

    pub fn advance(&mut self, direction: Direction, message: &Message) -> Result<(), String> {
        use Direction::*;
        use State::*;
        let training = self.phase == Phase::Training;
        let next = match (self.state, direction, message) {
            (Done | Aborted, _, m) => return Err(format!("{} after the session ended", m.kind())),
            (_, _, Message::ProtocolError(_)) => Aborted,
            (Init, ToAgent, Message::Hello(h)) if h.role == Role::Harness => AwaitAgentHello,
            (AwaitAgentHello, FromAgent, Message::Hello(h)) if h.role == Role::Agent => AwaitPhaseStart,
            (AwaitPhaseStart, ToAgent, Message::PhaseStart(p)) if p.phase == self.phase => HarnessTurn,
            (HarnessTurn, ToAgent, Message::ResetResult(_)) => AwaitAct,
            (HarnessTurn, ToAgent, Message::SaveCheckpoint(_)) if training => AwaitSaved,
            (HarnessTurn, ToAgent, Message::PhaseComplete(_)) if !training => Done,
            (AwaitAct, FromAgent, Message::Act(_)) => AwaitOutcome,
            (AwaitAct, FromAgent, Message::PhaseComplete(c)) if training && c.initiator == Role::Agent => {
                AwaitSaveRequest
            }
            (AwaitOutcome, ToAgent, Message::StepOutcome(o)) => {
                self.step_outcomes += 1;
                if o.done || o.budget_remaining == Limit::Finite(0) {
                    HarnessTurn
                } else {
                    AwaitAct
                }
            }
            (AwaitSaveRequest, ToAgent, Message::SaveCheckpoint(_)) => AwaitSaved,
            (AwaitSaved, FromAgent, Message::CheckpointSaved(_)) => AwaitClose,
            (AwaitClose, ToAgent, Message::PhaseComplete(c)) if c.initiator == Role::Harness => Done,
            (state, direction, m) => {
                return Err(format!(
                    "unexpected {} {:?} in state {:?} ({:?} phase)",
                    m.kind(),
                    direction,
                    state,
                    self.phase
                ))
            }
        };
        self.state = next;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TranscriptViolation {
    pub index: usize,
    pub reason: String,
}

/// Checks a complete transcript: every message legal and the session
/// finished cleanly.
pub fn validate_transcript(phase: Phase, entries: &[TranscriptEntry]) -> Result<(), TranscriptViolation> {
    let mut state = ProtocolState::new(phase);
    for (index, entry) in entries.iter().enumerate() {
        state.advance(entry.direction, &entry.message).map_err(|reason| TranscriptViolation { index, reason })?;
    }
    if !state.is_done() {
        return Err(TranscriptViolation { index: entries.len(), reason: "session did not complete".into() });
    }
    Ok(())
}

/// Number of `StepOutcome` messages the harness served.
pub fn count_step_outcomes(entries: &[TranscriptEntry]) -> u64 {
    entries.iter().filter(|e| e.direction == Direction::ToAgent && matches!(e.message, Message::StepOutcome(_))).count()
        as u64
}
