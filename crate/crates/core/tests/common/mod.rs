#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::time::Duration;

use procbench::budget::Limit;
use procbench::orchestrator::RoundConfig;
use procbench::registry::{Manifest, Submission};
use procbench::scoring::Aggregation;

pub const AGENT: &str = env!("CARGO_BIN_EXE_procbench-agent");

pub const ALL_ENVS: [&str; 8] = [
    "gridmaze",
    "collector",
    "miner-lite",
    "corridor",
    "chaser-lite",
    "plunder-lite",
    "caterpillar-lite",
    "safezone-lite",
];

/// Manifest running the reference agent with extra flags in both phases.
pub fn agent_manifest(flags: &[&str]) -> Manifest {
    let argv: Vec<String> = std::iter::once(AGENT.to_string()).chain(flags.iter().map(|s| s.to_string())).collect();
    Manifest::new(argv.clone(), argv)
}

/// A submission that was not ingested: it runs from `dir` directly.
pub fn submission(dir: &Path, id: &str, flags: &[&str]) -> Submission {
    let source_dir = dir.join(id);
    std::fs::create_dir_all(&source_dir).unwrap();
    Submission {
        id: id.to_string(),
        team: format!("team-{id}"),
        source_dir,
        manifest: agent_manifest(flags),
        received_at: 0,
    }
}

/// Desk-scale config over the given envs.
pub fn desk_config(
    round: &str,
    public: &[&str],
    holdout: &[&str],
    budget: u64,
    rollout_levels: u32,
    trials: u32,
) -> RoundConfig {
    RoundConfig {
        round_id: round.parse().unwrap(),
        env_ids_public: public.iter().map(|s| s.to_string()).collect(),
        env_ids_holdout: holdout.iter().map(|s| s.to_string()).collect(),
        timestep_budget: budget,
        level_start: 0,
        num_levels: Limit::Finite(200),
        rollout_levels,
        trials,
        wall_clock_limit: Duration::from_secs(60),
        aggregation: if holdout.is_empty() { Aggregation::PlainMean } else { Aggregation::WeightedPublicHoldout },
        seed: 7,
    }
}

pub fn scratch() -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().to_path_buf();
    (dir, path)
}
