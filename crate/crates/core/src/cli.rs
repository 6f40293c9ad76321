//! Operator command line.
//!
//! Machine output goes to stdout, diagnostics to stderr. Exit codes: 0 on
//! success, 1 on domain errors (including failed agent chains), 2 on usage
//! errors. Every score printed is a `*_text` field of a stored score report.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::budget::{Limit, Track};
use crate::envcore::{EnvRegistry, Visibility};
use crate::orchestrator::{
    default_workers, execute_streaming, plan_round, score_submission, EvaluationResult, ExecEvent, ExecOptions,
    RoundConfig, WORKERS_ENV,
};
use crate::registry::{leaderboard_csv, leaderboard_json, RoundMeta, Store, DEFAULT_SCRUB_THRESHOLD, STORE_ENV};
use crate::scoring::ScoreReport;

#[derive(Debug, Parser)]
#[command(name = "procbench", version, about = "Evaluate agent submissions on procedurally generated environments")]
pub struct Cli {
    /// Store directory.
    #[arg(long, global = true, env = STORE_ENV, default_value = "procbench-store")]
    pub store: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// List the registered environments.
    EnvsList {
        /// Extra environments from a suite file.
        #[arg(long)]
        suite: Option<PathBuf>,
    },
    /// Ingest a submission directory.
    Submit {
        dir: PathBuf,
        #[arg(long)]
        team: Option<String>,
        /// Files strictly larger than this many bytes are removed.
        #[arg(long, default_value_t = DEFAULT_SCRUB_THRESHOLD)]
        scrub_threshold: u64,
    },
    /// Run every trial of a round and score the submissions.
    Eval(EvalArgs),
    /// Run a single trial of a round.
    Trial {
        #[command(flatten)]
        eval: EvalArgs,
        /// Trial index to run.
        #[arg(long, default_value_t = 0)]
        index: u32,
    },
    /// Rank the submissions of a round.
    Leaderboard {
        #[arg(long)]
        round: String,
        /// Defaults to the round's own track.
        #[arg(long, value_enum)]
        track: Option<TrackArg>,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
    /// Print a stored score report.
    Report {
        #[arg(long)]
        round: String,
        #[arg(long)]
        submission: String,
    },
    /// Recompute every score of a round from stored raw returns and compare
    /// with the stored reports.
    Replay {
        #[arg(long)]
        round: String,
    },
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Preset (warmup, round1, round2, final-se, final-gen) or config file.
    #[arg(long)]
    pub round: String,
    /// Store results under this round id instead of the config's.
    #[arg(long)]
    pub name: Option<String>,
    /// Submissions to evaluate; all registered ones when omitted.
    #[arg(long = "submission")]
    pub submissions: Vec<String>,
    #[arg(long, env = WORKERS_ENV)]
    pub workers: Option<usize>,
    /// Timestep budget per training phase.
    #[arg(long)]
    pub budget: Option<u64>,
    /// Training levels: a count or `unlimited`.
    #[arg(long, value_parser = parse_limit)]
    pub levels: Option<Limit>,
    #[arg(long)]
    pub rollout_levels: Option<u32>,
    #[arg(long)]
    pub trials: Option<u32>,
    /// Wall-clock limit per phase, in seconds.
    #[arg(long)]
    pub wall_clock: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub suite: Option<PathBuf>,
    /// Keep per-job scratch directories.
    #[arg(long)]
    pub keep_workdirs: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TrackArg {
    #[value(alias = "se")]
    SampleEfficiency,
    #[value(alias = "gen")]
    Generalization,
}

impl From<TrackArg> for Track {
    fn from(t: TrackArg) -> Track {
        match t {
            TrackArg::SampleEfficiency => Track::SampleEfficiency,
            TrackArg::Generalization => Track::Generalization,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Table,
    Csv,
    Json,
}

fn parse_limit(s: &str) -> Result<Limit, String> {
    if s.eq_ignore_ascii_case("unlimited") {
        return Ok(Limit::Unlimited);
    }
    s.parse::<u64>().map(Limit::Finite).map_err(|_| format!("expected a count or `unlimited`, got `{s}`"))
}

/// Parses `argv` (including the program name) and runs the command.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let stdout = std::io::stdout();
    match dispatch(cli, &mut stdout.lock()) {
        Ok(code) => code,
        // Output piped into a reader that closed early, e.g. `| head`.
        Err(e) if e.downcast_ref::<std::io::Error>().is_some_and(|io| io.kind() == std::io::ErrorKind::BrokenPipe) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn dispatch(cli: Cli, out: &mut dyn Write) -> Result<i32> {
    match cli.command {
        Command::EnvsList { suite } => envs_list(suite.as_deref(), out),
        Command::Submit { dir, team, scrub_threshold } => {
            let mut store = Store::open(&cli.store)?;
            let (sub, report) = store.ingest(&dir, None, team.as_deref(), scrub_threshold)?;
            for f in &report.removed {
                eprintln!("scrubbed {} ({} bytes > {} bytes)", f.path.display(), f.size_bytes, report.threshold);
            }
            writeln!(out, "{}", sub.id)?;
            Ok(0)
        }
        Command::Eval(args) => evaluate(&cli.store, &args, None, out),
        Command::Trial { eval, index } => evaluate(&cli.store, &eval, Some(index), out),
        Command::Leaderboard { round, track, format } => {
            let mut store = Store::open(&cli.store)?;
            let track = match track {
                Some(t) => t.into(),
                None => store.load_round(&round)?.config.track(),
            };
            let rows = store.leaderboard(&round, track)?;
            match format {
                Format::Csv => write!(out, "{}", leaderboard_csv(&rows))?,
                Format::Json => writeln!(out, "{}", leaderboard_json(&rows))?,
                Format::Table => {
                    writeln!(out, "{:>4}  {:<24} {:<12} {:>10}", "rank", "team", "submission", "score")?;
                    for row in &rows {
                        writeln!(
                            out,
                            "{:>4}  {:<24} {:<12} {:>10}",
                            row.rank, row.team, row.submission_id, row.value_text
                        )?;
                    }
                }
            }
            Ok(0)
        }
        Command::Report { round, submission } => {
            let store = Store::open(&cli.store)?;
            let path = store.report_path(&round, &submission);
            let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
            writeln!(out, "{}", text.trim_end())?;
            Ok(0)
        }
        Command::Replay { round } => replay(&cli.store, &round, out),
    }
}

fn envs_list(suite: Option<&Path>, out: &mut dyn Write) -> Result<i32> {
    let mut envs = EnvRegistry::builtin();
    if let Some(path) = suite {
        envs.extend_from_suite_file(path)?;
    }
    writeln!(out, "{:<18} {:>6} {:>6}  visibility", "env_id", "r_min", "r_max")?;
    for spec in envs.specs() {
        let vis = match spec.visibility {
            Visibility::Public => "public",
            Visibility::HoldOut => "hold_out",
        };
        writeln!(out, "{:<18} {:>6} {:>6}  {vis}", spec.env_id, spec.r_min, spec.r_max)?;
    }
    Ok(0)
}

fn round_config(args: &EvalArgs) -> Result<RoundConfig> {
    let mut config = RoundConfig::load(&args.round)?;
    if let Some(name) = &args.name {
        config.round_id = name.parse()?;
    }
    if let Some(b) = args.budget {
        config.timestep_budget = b;
    }
    if let Some(l) = args.levels {
        config.num_levels = l;
    }
    if let Some(r) = args.rollout_levels {
        config.rollout_levels = r;
    }
    if let Some(t) = args.trials {
        config.trials = t;
    }
    if let Some(w) = args.wall_clock {
        config.wall_clock_limit = Duration::try_from_secs_f64(w).context("--wall-clock")?;
    }
    if let Some(s) = args.seed {
        config.seed = s;
    }
    config.validate()?;
    Ok(config)
}

fn evaluate(store_dir: &Path, args: &EvalArgs, only_trial: Option<u32>, out: &mut dyn Write) -> Result<i32> {
    let config = round_config(args)?;
    if let Some(k) = only_trial {
        if k >= config.trials {
            bail!("trial index {k} out of range for {} trials", config.trials);
        }
    }
    let mut envs = EnvRegistry::builtin();
    if let Some(path) = &args.suite {
        envs.extend_from_suite_file(path)?;
    }
    let mut store = Store::open(store_dir)?;
    let submissions = if args.submissions.is_empty() {
        store.submissions()?
    } else {
        args.submissions.iter().map(|id| store.submission(id)).collect::<Result<Vec<_>, _>>()?
    };
    let mut plan = plan_round(&config, &submissions, &envs)?;
    if let Some(k) = only_trial {
        plan = plan.only_trial(k);
    }
    let round = config.round_id.to_string();
    store.save_round(&RoundMeta { config: config.clone(), specs: plan.specs.clone() })?;

    let opts = ExecOptions {
        workers: args.workers.unwrap_or_else(default_workers),
        work_root: store.round_dir(&round).join("work"),
        artifacts_dir: store.artifacts_dir(&round),
        keep_workdirs: args.keep_workdirs,
    };
    eprintln!("{round}: {} jobs on {} workers", plan.jobs.len(), opts.workers);
    let mut results: BTreeMap<String, Vec<EvaluationResult>> = BTreeMap::new();
    let mut record_error = None;
    execute_streaming(&plan, &opts, |event| {
        if let ExecEvent::Result(r) = event {
            if let Some(f) = r.status.failure() {
                eprintln!("{}/{}/trial {}: {f}", r.submission_id, r.env_id, r.trial);
            }
            if record_error.is_none() {
                if let Err(e) = store.record(&r) {
                    record_error = Some(e);
                }
            }
            results.entry(r.submission_id.clone()).or_default().push(r);
        }
    });
    if let Some(e) = record_error {
        return Err(e.into());
    }

    let mut failed = false;
    for sub in &submissions {
        // Score from everything stored for the round, so a single-trial run
        // combines with trials recorded earlier.
        let stored: Vec<EvaluationResult> =
            store.results(&round)?.into_iter().filter(|r| r.submission_id == sub.id).collect();
        let refs: Vec<&EvaluationResult> = stored.iter().collect();
        let entry = score_submission(&config, &plan.specs, &sub.id, &refs)?;
        let path = store.report_path(&round, &sub.id);
        entry.report.write_json(&path)?;
        failed |= results.get(&sub.id).is_some_and(|rs| rs.iter().any(|r| !r.status.is_ok()));
        match only_trial {
            Some(k) => writeln!(out, "{}\t{round}\ttrial {k}\t{}", sub.id, entry.report.trials[k as usize].value_text)?,
            None => {
                let trials: Vec<&str> = entry.report.trials.iter().map(|t| t.value_text.as_str()).collect();
                writeln!(out, "{}\t{round}\t{}\ttrials {}", sub.id, entry.report.track_value_text, trials.join(" "))?;
            }
        }
        eprintln!("report: {}", path.display());
    }
    Ok(if failed { 1 } else { 0 })
}

fn replay(store_dir: &Path, round: &str, out: &mut dyn Write) -> Result<i32> {
    let store = Store::open(store_dir)?;
    let recomputed = store.score_reports(round)?;
    let mut mismatches = 0;
    for (id, report) in &recomputed {
        let check = report.recompute()?;
        let stored = ScoreReport::read_json(&store.report_path(round, id)).ok();
        let stored_text = stored.as_ref().map_or("-", |s| s.track_value_text.as_str());
        let ok = check == report.track_value && stored.as_ref().is_some_and(|s| s.track_value == report.track_value);
        if !ok {
            mismatches += 1;
        }
        writeln!(
            out,
            "{id}\trecomputed {}\tstored {stored_text}\t{}",
            report.track_value_text,
            if ok { "ok" } else { "MISMATCH" }
        )?;
    }
    Ok(if mismatches == 0 { 0 } else { 1 })
}
