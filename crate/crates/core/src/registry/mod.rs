//! Submission intake, result persistence and leaderboards.
//!
//! On-disk layout under the store root:
//!
//! ```text
//! submissions.index              one JSON line per submission
//! submissions/<id>/              scrubbed copy of the submitted directory
//! <round_id>/round.json          round config and the env specs it used
//! <round_id>/results.log         one JSON line per chain result
//! <round_id>/artifacts/<sha256>  checkpoints
//! <round_id>/reports/<id>.json   score reports
//! ```

mod export;
mod log;
mod submission;

pub use self::log::{read_lines, repair_tail, Appender};
pub use export::{leaderboard_csv, leaderboard_json, LeaderboardRow};
pub use submission::{scrub, Manifest, ScrubReport, ScrubbedFile, Submission, DEFAULT_SCRUB_THRESHOLD, MANIFEST_FILE};

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::budget::Track;
use crate::envcore::EnvSpec;
use crate::orchestrator::{score_results, EvaluationResult, RoundConfig};
use crate::scoring::{format_score, rank_leaderboard, ScoreReport, ScoringError};

/// Environment variable naming the default store directory.
pub const STORE_ENV: &str = "PROCBENCH_STORE";

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("manifest is missing the {0} entrypoint")]
    MissingEntrypoint(String),
    #[error("submission directory {0} contains no files")]
    EmptySubmission(String),
    #[error("invalid manifest: {0}")]
    InvalidManifest(String),
    #[error("unknown submission `{0}`")]
    UnknownSubmission(String),
    #[error("conflicting result for {submission}/{env}/trial {trial} in round {round}")]
    ConflictingResult { round: String, submission: String, env: String, trial: u32 },
    #[error("no results for round `{0}`")]
    NoResults(String),
    #[error("unknown round `{0}`")]
    UnknownRound(String),
    #[error("round `{round}` was configured differently before; use a new round id")]
    RoundConfigChanged { round: String },
    #[error("round `{round}` is a {actual} round, not {requested}")]
    TrackMismatch { round: String, actual: Track, requested: Track },
    #[error("{path}:{line}: {message}")]
    Corrupt { path: String, line: usize, message: String },
    #[error("scoring: {0}")]
    Scoring(#[from] ScoringError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// What a round was evaluated with; stored next to its results so replays
/// do not depend on the current suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMeta {
    pub config: RoundConfig,
    pub specs: BTreeMap<String, EnvSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordOutcome {
    Appended,
    AlreadyPresent,
}

type ResultKey = (String, String, u32);

struct RoundLog {
    appender: Appender,
    index: HashMap<ResultKey, EvaluationResult>,
}

/// Single-writer handle on a store directory.
pub struct Store {
    root: PathBuf,
    submissions: Option<BTreeMap<String, Submission>>,
    rounds: HashMap<String, RoundLog>,
}

fn now_secs() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn result_key(r: &EvaluationResult) -> ResultKey {
    (r.submission_id.clone(), r.env_id.clone(), r.trial)
}

impl Store {
    pub fn open(root: &Path) -> Result<Self, RegistryError> {
        fs::create_dir_all(root)?;
        Ok(Store { root: root.to_path_buf(), submissions: None, rounds: HashMap::new() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn index_path(&self) -> PathBuf {
        self.root.join("submissions.index")
    }

    pub fn round_dir(&self, round: &str) -> PathBuf {
        self.root.join(round)
    }

    pub fn artifacts_dir(&self, round: &str) -> PathBuf {
        self.round_dir(round).join("artifacts")
    }

    pub fn results_path(&self, round: &str) -> PathBuf {
        self.round_dir(round).join("results.log")
    }

    pub fn report_path(&self, round: &str, submission_id: &str) -> PathBuf {
        self.round_dir(round).join("reports").join(format!("{submission_id}.json"))
    }

    fn load_submissions(&mut self) -> Result<&mut BTreeMap<String, Submission>, RegistryError> {
        if self.submissions.is_none() {
            let list: Vec<Submission> = read_lines(&self.index_path())?;
            self.submissions = Some(list.into_iter().map(|s| (s.id.clone(), s)).collect());
        }
        Ok(self.submissions.as_mut().expect("just loaded"))
    }

    pub fn submissions(&mut self) -> Result<Vec<Submission>, RegistryError> {
        Ok(self.load_submissions()?.values().cloned().collect())
    }

    pub fn submission(&mut self, id: &str) -> Result<Submission, RegistryError> {
        self.load_submissions()?.get(id).cloned().ok_or_else(|| RegistryError::UnknownSubmission(id.to_string()))
    }

    /// Copies `source_dir` into the store, scrubs the copy and registers it.
    /// The manifest is read from the directory when not given.
    pub fn ingest(
        &mut self,
        source_dir: &Path,
        manifest: Option<Manifest>,
        team: Option<&str>,
        threshold: u64,
    ) -> Result<(Submission, ScrubReport), RegistryError> {
        if !source_dir.is_dir() {
            return Err(RegistryError::Io(io::Error::new(
                io::ErrorKind::NotFound,
                format!("{} is not a directory", source_dir.display()),
            )));
        }
        let manifest = match manifest {
            Some(m) => m,
            None => Manifest::read(source_dir)?,
        };
        manifest.validate()?;

        let existing = self.load_submissions()?;
        let mut n = existing.len() + 1;
        while existing.contains_key(&format!("sub-{n:04}")) {
            n += 1;
        }
        let id = format!("sub-{n:04}");
        let dest = self.root.join("submissions").join(&id);
        if dest.exists() {
            fs::remove_dir_all(&dest)?;
        }
        let files = submission::copy_tree(source_dir, &dest)?;
        if files == 0 {
            let _ = fs::remove_dir_all(&dest);
            return Err(RegistryError::EmptySubmission(source_dir.display().to_string()));
        }
        let report = scrub(&dest, threshold)?;
        let team = team
            .map(str::to_string)
            .or_else(|| manifest.team.clone())
            .or_else(|| source_dir.file_name().map(|n| n.to_string_lossy().into_owned()))
            .unwrap_or_else(|| id.clone());
        let submission =
            Submission { id: id.clone(), team, source_dir: dest.canonicalize()?, manifest, received_at: now_secs() };
        Appender::open(&self.index_path())?.append(&submission)?;
        self.load_submissions()?.insert(id, submission.clone());
        Ok((submission, report))
    }

    /// Writes `round.json`, refusing to change the config of a round that
    /// already has results.
    pub fn save_round(&mut self, meta: &RoundMeta) -> Result<(), RegistryError> {
        let round = meta.config.round_id.to_string();
        if let Ok(existing) = self.load_round(&round) {
            if &existing == meta {
                return Ok(());
            }
            if !read_lines::<EvaluationResult>(&self.results_path(&round))?.is_empty() {
                return Err(RegistryError::RoundConfigChanged { round });
            }
        }
        let dir = self.round_dir(&round);
        fs::create_dir_all(&dir)?;
        let text = serde_json::to_string_pretty(meta).map_err(io::Error::other)?;
        let tmp = dir.join("round.json.tmp");
        fs::write(&tmp, text)?;
        fs::rename(tmp, dir.join("round.json"))?;
        Ok(())
    }

    pub fn load_round(&self, round: &str) -> Result<RoundMeta, RegistryError> {
        let path = self.round_dir(round).join("round.json");
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => {
                return Err(RegistryError::UnknownRound(round.to_string()))
            }
            Err(e) => return Err(e.into()),
        };
        serde_json::from_str(&text).map_err(|e| RegistryError::Corrupt {
            path: path.display().to_string(),
            line: e.line(),
            message: e.to_string(),
        })
    }

    pub fn rounds(&self) -> Result<Vec<String>, RegistryError> {
        let mut out = Vec::new();
        for entry in fs::read_dir(&self.root)? {
            let entry = entry?;
            if entry.path().join("round.json").is_file() {
                out.push(entry.file_name().to_string_lossy().into_owned());
            }
        }
        out.sort();
        Ok(out)
    }

    fn round_log(&mut self, round: &str) -> Result<&mut RoundLog, RegistryError> {
        if !self.rounds.contains_key(round) {
            let path = self.results_path(round);
            let appender = Appender::open(&path)?;
            let index = read_lines::<EvaluationResult>(&path)?.into_iter().map(|r| (result_key(&r), r)).collect();
            self.rounds.insert(round.to_string(), RoundLog { appender, index });
        }
        Ok(self.rounds.get_mut(round).expect("just inserted"))
    }

    /// Appends a result. Re-recording identical content (timings aside) is a
    /// no-op; different content under the same key is an error.
    pub fn record(&mut self, result: &EvaluationResult) -> Result<RecordOutcome, RegistryError> {
        if !self.load_submissions()?.contains_key(&result.submission_id) {
            return Err(RegistryError::UnknownSubmission(result.submission_id.clone()));
        }
        let log = self.round_log(&result.round_id)?;
        let key = result_key(result);
        if let Some(existing) = log.index.get(&key) {
            if existing.without_timings() == result.without_timings() {
                return Ok(RecordOutcome::AlreadyPresent);
            }
            return Err(RegistryError::ConflictingResult {
                round: result.round_id.clone(),
                submission: key.0,
                env: key.1,
                trial: key.2,
            });
        }
        log.appender.append(result)?;
        log.index.insert(key, result.clone());
        Ok(RecordOutcome::Appended)
    }

    /// All stored results of a round, sorted by (submission, env, trial).
    pub fn results(&self, round: &str) -> Result<Vec<EvaluationResult>, RegistryError> {
        let mut seen = BTreeSet::new();
        let mut out: Vec<EvaluationResult> = read_lines::<EvaluationResult>(&self.results_path(round))?
            .into_iter()
            .filter(|r| seen.insert(result_key(r)))
            .collect();
        out.sort_by(|a, b| a.key().cmp(&b.key()));
        Ok(out)
    }

    /// Recomputes every submission's score report from stored raw returns.
    pub fn score_reports(&self, round: &str) -> Result<BTreeMap<String, ScoreReport>, RegistryError> {
        let meta = self.load_round(round)?;
        let results = self.results(round)?;
        if results.is_empty() {
            return Err(RegistryError::NoResults(round.to_string()));
        }
        Ok(score_results(&meta.config, &meta.specs, &results)?.into_iter().map(|(id, e)| (id, e.report)).collect())
    }

    pub fn leaderboard(&mut self, round: &str, track: Track) -> Result<Vec<LeaderboardRow>, RegistryError> {
        let meta = self.load_round(round)?;
        if meta.config.track() != track {
            return Err(RegistryError::TrackMismatch {
                round: round.to_string(),
                actual: meta.config.track(),
                requested: track,
            });
        }
        let reports = self.score_reports(round)?;
        let teams: BTreeMap<String, String> =
            self.load_submissions()?.values().map(|s| (s.id.clone(), s.team.clone())).collect();
        let ranked = rank_leaderboard(reports.iter().map(|(id, r)| (id.clone(), r.track_value)).collect());
        Ok(ranked
            .into_iter()
            .map(|entry| {
                let report = &reports[&entry.submission_id];
                let best = report
                    .trials
                    .iter()
                    .find(|t| t.value == report.track_value)
                    .expect("track value is one of the trial values");
                LeaderboardRow {
                    rank: entry.rank,
                    team: teams.get(&entry.submission_id).cloned().unwrap_or_else(|| entry.submission_id.clone()),
                    submission_id: entry.submission_id,
                    value: entry.value,
                    value_text: format_score(entry.value),
                    per_env: best.envs.iter().map(|e| (e.env_id.clone(), e.normalized)).collect(),
                }
            })
            .collect())
    }
}
