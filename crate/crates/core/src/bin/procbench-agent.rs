//! Reference random agent.
//!
//! Speaks the harness protocol on stdin/stdout. Acts uniformly at random;
//! the checkpoint records the seed material so a rollout replays the same
//! action stream for the same checkpoint. Fault-injection flags let tests
//! exercise the harness's error paths.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use procbench::budget::Limit;
use procbench::protocol::{
    Act, AgentClient, CheckpointSaved, FrameError, Hello, Message, Phase, PhaseComplete, PhaseStart, Role,
};
use procbench::seeding::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Misbehave {
    /// Send an Act right after Hello instead of waiting for PhaseStart.
    ActBeforePhaseStart,
    /// Exit cleanly when asked to save, without saving.
    ExitBeforeSave,
    /// Claim a checkpoint was saved without writing it.
    SkipCheckpointFile,
    /// Stop responding after the handshake.
    Hang,
    /// Announce an unsupported protocol version.
    BadVersion,
    /// Send an out-of-range action.
    BadAction,
}

#[derive(Debug, Parser)]
#[command(name = "procbench-agent", about = "Reference random agent for the procbench protocol")]
struct Args {
    /// Base seed for the action stream.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Mix wall-clock entropy into the action stream (stochastic agent).
    #[arg(long)]
    entropy: bool,
    /// Stop training early (agent-initiated completion) after this many steps.
    #[arg(long)]
    stop_after: Option<u64>,
    /// Exit with status 101 during training on these environments.
    #[arg(long, value_delimiter = ',')]
    crash_train_envs: Vec<String>,
    /// Exit with status 101 during rollout on these environments.
    #[arg(long, value_delimiter = ',')]
    crash_rollout_envs: Vec<String>,
    #[arg(long, value_enum)]
    misbehave: Option<Misbehave>,
    workdir: PathBuf,
    checkpoint: PathBuf,
}

#[derive(Debug, Serialize, Deserialize)]
struct Checkpoint {
    kind: String,
    env_id: String,
    seed: u64,
    steps_used: u64,
    episodes: u64,
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("procbench-agent: {e}");
            ExitCode::from(2)
        }
    }
}

fn entropy() -> u64 {
    let nanos = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_nanos()).unwrap_or(0);
    nanos as u64 ^ (std::process::id() as u64).rotate_left(32)
}

fn run(args: &Args) -> Result<ExitCode, FrameError> {
    let mut client = AgentClient::stdio();

    if let Some(mode @ (Misbehave::ActBeforePhaseStart | Misbehave::BadVersion)) = args.misbehave {
        let _ = client.recv()?;
        if mode == Misbehave::BadVersion {
            client.send(&Message::Hello(Hello { protocol_version: 99, role: Role::Agent }))?;
        } else {
            client.send(&Message::Act(Act { action: 0 }))?;
        }
        // Drain until the harness gives up on us.
        while client.recv().is_ok() {}
        return Ok(ExitCode::from(1));
    }

    let start = client.handshake()?;
    if args.misbehave == Some(Misbehave::Hang) {
        loop {
            std::thread::sleep(std::time::Duration::from_secs(60));
        }
    }
    match start.phase {
        Phase::Training => train(args, &mut client, &start),
        Phase::Rollout => rollout(args, &mut client, &start),
    }
}

fn train<R: std::io::Read, W: std::io::Write>(
    args: &Args,
    client: &mut AgentClient<R, W>,
    start: &PhaseStart,
) -> Result<ExitCode, FrameError> {
    let seed = if args.entropy { args.seed ^ entropy() } else { args.seed };
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[b"train", start.env_id.as_bytes(), &seed.to_le_bytes()]));
    let crash = args.crash_train_envs.contains(&start.env_id);
    let mut steps = 0u64;
    let mut episodes = 0u64;
    loop {
        match client.recv()? {
            Message::ResetResult(_) => {
                if crash {
                    return Ok(ExitCode::from(101));
                }
                if args.stop_after.is_some_and(|n| steps >= n) {
                    client.send(&Message::PhaseComplete(PhaseComplete {
                        initiator: Role::Agent,
                        steps_served: steps,
                        episodes,
                    }))?;
                    continue;
                }
                act(args, client, &mut rng)?;
            }
            Message::StepOutcome(o) => {
                steps += 1;
                if o.done {
                    episodes += 1;
                } else if o.budget_remaining != Limit::Finite(0) {
                    if args.stop_after.is_some_and(|n| steps >= n) {
                        client.send(&Message::PhaseComplete(PhaseComplete {
                            initiator: Role::Agent,
                            steps_served: steps,
                            episodes,
                        }))?;
                    } else {
                        act(args, client, &mut rng)?;
                    }
                }
            }
            Message::SaveCheckpoint(save) => {
                if args.misbehave == Some(Misbehave::ExitBeforeSave) {
                    return Ok(ExitCode::SUCCESS);
                }
                if args.misbehave != Some(Misbehave::SkipCheckpointFile) {
                    let ckpt = Checkpoint {
                        kind: "random".into(),
                        env_id: start.env_id.clone(),
                        seed,
                        steps_used: steps,
                        episodes,
                    };
                    let text = serde_json::to_vec(&ckpt).expect("checkpoint serializes");
                    fs::write(&save.path, text).map_err(FrameError::Io)?;
                }
                client.send(&Message::CheckpointSaved(CheckpointSaved { path: save.path }))?;
            }
            Message::PhaseComplete(_) => return Ok(ExitCode::SUCCESS),
            Message::ProtocolError(e) => {
                eprintln!("harness reported: {}", e.reason);
                return Ok(ExitCode::from(1));
            }
            other => return Err(FrameError::Malformed(format!("unexpected {}", other.kind()))),
        }
    }
}

fn rollout<R: std::io::Read, W: std::io::Write>(
    args: &Args,
    client: &mut AgentClient<R, W>,
    start: &PhaseStart,
) -> Result<ExitCode, FrameError> {
    let text = fs::read(&start.checkpoint_path).map_err(FrameError::Io)?;
    let ckpt: Checkpoint =
        serde_json::from_slice(&text).map_err(|e| FrameError::Malformed(format!("checkpoint: {e}")))?;
    let seed = if args.entropy { ckpt.seed ^ entropy() } else { ckpt.seed };
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[
        b"rollout",
        start.env_id.as_bytes(),
        &seed.to_le_bytes(),
        &ckpt.steps_used.to_le_bytes(),
    ]));
    let crash = args.crash_rollout_envs.contains(&start.env_id);
    loop {
        match client.recv()? {
            Message::ResetResult(r) => {
                if crash && r.episode > 0 {
                    return Ok(ExitCode::from(101));
                }
                act(args, client, &mut rng)?;
            }
            Message::StepOutcome(o) if !o.done => act(args, client, &mut rng)?,
            Message::StepOutcome(_) => {}
            Message::PhaseComplete(_) => return Ok(ExitCode::SUCCESS),
            Message::ProtocolError(e) => {
                eprintln!("harness reported: {}", e.reason);
                return Ok(ExitCode::from(1));
            }
            other => return Err(FrameError::Malformed(format!("unexpected {}", other.kind()))),
        }
    }
}

fn act<R: std::io::Read, W: std::io::Write>(
    args: &Args,
    client: &mut AgentClient<R, W>,
    rng: &mut ChaCha8Rng,
) -> Result<(), FrameError> {
    let action = if args.misbehave == Some(Misbehave::BadAction) { 42 } else { rng.gen_range(0..5) };
    client.send(&Message::Act(Act { action }))
}
