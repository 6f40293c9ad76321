//! Wire protocol between the harness and external agent processes.
//!
//! Frames are a 4-byte big-endian length followed by a UTF-8 JSON body of
//! the form `{"kind": "...", "payload": {...}}`. Field names are documented
//! in `PROTOCOL.md` at the repository root.

mod agent;
mod client;
mod frame;
mod message;
mod phases;
mod transcript;

pub use agent::{AgentHandle, Entrypoint, ExitInfo, ProcessAgent};
pub use client::AgentClient;
pub use frame::{decode_frame, encode_frame, frame_body, read_frame, write_frame, FrameError, MAX_FRAME_LEN};
pub use message::*;
pub use phases::{
    run_rollout_phase, run_training_phase, sample_rollout_levels, sha256_file, CheckpointArtifact, Provenance,
    RolloutOutcome, RolloutRequest, SessionError, TrainingOutcome, TrainingRequest,
};
pub use transcript::{
    count_step_outcomes, validate_transcript, Direction, ProtocolState, TranscriptEntry, TranscriptViolation,
};
