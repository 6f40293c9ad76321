mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use common::{scratch, AGENT};
use procbench::scoring::ScoreReport;

const BIN: &str = env!("CARGO_BIN_EXE_procbench");

fn run(store: &Path, args: &[&str]) -> Output {
    Command::new(BIN).arg("--store").arg(store).args(args).env_remove("PROCBENCH_WORKERS").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn submit(root: &Path, store: &Path, name: &str, flags: &[&str]) -> String {
    let dir = root.join(name);
    fs::create_dir_all(&dir).unwrap();
    let argv: Vec<String> = std::iter::once(AGENT.to_string()).chain(flags.iter().map(|s| s.to_string())).collect();
    let list = format!("{argv:?}");
    fs::write(dir.join("procbench.toml"), format!("train = {list}\nrollout = {list}\nteam = \"{name}\"\n")).unwrap();
    let out = run(store, &["submit", dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    stdout(&out).trim().to_string()
}

const DESK: [&str; 6] = ["--budget", "500", "--rollout-levels", "10", "--workers", "2"];

#[test]
fn envs_list_shows_the_suite() {
    let (_t, root) = scratch();
    let out = run(&root, &["envs-list"]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert_eq!(text.lines().count(), 9, "header plus eight envs:\n{text}");
    assert!(text.lines().any(|l| l.starts_with("safezone-lite") && l.ends_with("hold_out")));
}

#[test]
fn usage_errors_exit_2() {
    let (_t, root) = scratch();
    assert_eq!(run(&root, &["eval", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(run(&root, &[]).status.code(), Some(2));
    assert_eq!(run(&root, &["--help"]).status.code(), Some(0));
    let out = run(&root, &["eval", "--round", "round9"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn submit_eval_leaderboard_replay() {
    let (_t, root) = scratch();
    let store = root.join("store");
    let a = submit(&root, &store, "alpha", &["--seed", "1"]);
    let b = submit(&root, &store, "beta", &["--seed", "2"]);
    assert_eq!((a.as_str(), b.as_str()), ("sub-0001", "sub-0002"));

    let mut args = vec!["eval", "--round", "round1"];
    args.extend(DESK);
    let out = run(&store, &args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert_eq!(text.lines().count(), 2);
    for line in text.lines() {
        let fields: Vec<&str> = line.split('\t').collect();
        assert_eq!(fields[1], "round1");
        let report = ScoreReport::read_json(&store.join("round1/reports").join(format!("{}.json", fields[0]))).unwrap();
        assert_eq!(fields[2], report.track_value_text);
        assert_eq!(report.recompute().unwrap(), report.track_value);
        assert_eq!(report.trials[0].envs.len(), 4);
    }

    let shown = run(&store, &["report", "--round", "round1", "--submission", &a]);
    let report: ScoreReport = serde_json::from_slice(&shown.stdout).unwrap();
    assert_eq!(report.submission_id, a);

    let table = stdout(&run(&store, &["leaderboard", "--round", "round1"]));
    assert_eq!(table.lines().count(), 3);
    let csv = stdout(&run(&store, &["leaderboard", "--round", "round1", "--format", "csv"]));
    assert!(csv.starts_with("rank,submission_id,team,value,"));
    let wrong = run(&store, &["leaderboard", "--round", "round1", "--track", "gen"]);
    assert_eq!(wrong.status.code(), Some(1));

    let replay = run(&store, &["replay", "--round", "round1"]);
    assert!(replay.status.success());
    assert!(stdout(&replay).lines().all(|l| l.ends_with("\tok")));

    // Re-running the same round is idempotent.
    assert!(run(&store, &args).status.success());
    assert_eq!(fs::read_to_string(store.join("round1/results.log")).unwrap().lines().count(), 8);

    // Tampering with a stored report is caught by replay.
    let path = store.join("round1/reports").join(format!("{a}.json"));
    let mut tampered = ScoreReport::read_json(&path).unwrap();
    tampered.track_value += 0.125;
    tampered.write_json(&path).unwrap();
    let replay = run(&store, &["replay", "--round", "round1"]);
    assert_eq!(replay.status.code(), Some(1));
    assert!(stdout(&replay).contains("MISMATCH"));
}

#[test]
fn trials_run_one_at_a_time_combine() {
    let (_t, root) = scratch();
    let store = root.join("store");
    let id = submit(&root, &store, "solo", &["--entropy"]);
    let base = ["--round", "final-gen", "--trials", "2", "--budget", "300", "--rollout-levels", "5", "--workers", "2"];
    for k in ["0", "1"] {
        let mut args = vec!["trial"];
        args.extend(base);
        args.extend(["--index", k]);
        let out = run(&store, &args);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        assert!(stdout(&out).starts_with(&format!("{id}\tfinal-gen\ttrial {k}\t")));
    }
    let report = ScoreReport::read_json(&store.join("final-gen/reports").join(format!("{id}.json"))).unwrap();
    assert_eq!(report.trials.len(), 2);
    assert!(report.trials.iter().all(|t| t.envs.iter().all(|e| e.failure.is_none())));
    let best = report.trials.iter().map(|t| t.value).fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(report.track_value, best);
}

#[test]
fn failed_chains_make_eval_exit_1() {
    let (_t, root) = scratch();
    let store = root.join("store");
    submit(&root, &store, "crashy", &["--crash-train-envs", "gridmaze"]);
    let mut args = vec!["eval", "--round", "warmup"];
    args.extend(DESK);
    let out = run(&store, &args);
    assert_eq!(out.status.code(), Some(1));
    assert!(stdout(&out).contains("\t0.000000\t"));
    assert!(String::from_utf8_lossy(&out.stderr).contains("AgentCrashed"));
}
