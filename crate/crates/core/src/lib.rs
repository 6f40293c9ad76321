//! Evaluation harness for agents trained under sample-efficiency and
//! generalization constraints on procedurally generated grid environments.
//!
//! - [`envcore`]: seed-deterministic toy environments and level generation
//! - [`budget`]: timestep and level-window metering
//! - [`protocol`]: framed wire protocol to external agent processes
//! - [`scoring`]: normalized returns, round/trial/track scores, rankings
//! - [`orchestrator`]: job planning and the bounded worker pool
//! - [`registry`]: submission intake, result log, leaderboards
//! - [`cli`]: the `procbench` command line

pub mod budget;
pub mod cli;
pub mod envcore;
pub mod orchestrator;
pub mod protocol;
pub mod registry;
pub mod scoring;
pub mod seeding;
