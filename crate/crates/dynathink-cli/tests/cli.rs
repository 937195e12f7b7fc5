//! End-to-end tests of the `dynathink` binary: flag handling, artifact
//! shape, determinism, and failure exit paths.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dynathink::types::CostLedger;

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../..")
        .canonicalize()
        .unwrap()
}

fn bin() -> Command {
    let mut command = Command::new(env!("CARGO_BIN_EXE_dynathink"));
    command.current_dir(repo_root());
    command
}

fn run_ok(args: &[&str]) -> Output {
    let output = bin().args(args).output().unwrap();
    assert!(
        output.status.success(),
        "expected success for {args:?}, stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    output
}

fn run_err(args: &[&str]) -> Output {
    let output = bin().args(args).output().unwrap();
    assert!(
        !output.status.success(),
        "expected failure for {args:?}, stdout: {}",
        String::from_utf8_lossy(&output.stdout)
    );
    output
}

#[test]
fn run_replays_the_worked_fixture() {
    let out = tempfile::tempdir().unwrap();
    let out_arg = out.path().to_str().unwrap();
    let output = run_ok(&["run", "--config", "fixtures/worked.toml", "--out", out_arg]);
    let stdout = String::from_utf8(output.stdout).unwrap();
    assert!(stdout.contains("accuracy 1.000000"), "{stdout}");

    let summary = std::fs::read_to_string(out.path().join("summary.csv")).unwrap();
    let row = summary.lines().nth(1).unwrap();
    assert_eq!(
        row,
        "dynathink,strict-majority,consistency-steps,4,2,10,1.000000,1,2,24,0"
    );

    let ledger: CostLedger =
        serde_json::from_str(&std::fs::read_to_string(out.path().join("ledger.json")).unwrap())
            .unwrap();
    assert_eq!(ledger.total, 24);
    ledger.validate().unwrap();

    let verdicts = std::fs::read_to_string(out.path().join("verdicts.jsonl")).unwrap();
    assert_eq!(verdicts.lines().count(), 3);
    let buckets = std::fs::read_to_string(out.path().join("buckets.csv")).unwrap();
    assert!(buckets.starts_with("step_count,total,correct,accuracy\n"));
}

#[test]
fn repeated_runs_are_byte_identical() {
    let first = tempfile::tempdir().unwrap();
    let second = tempfile::tempdir().unwrap();
    for out in [&first, &second] {
        run_ok(&[
            "run",
            "--config",
            "fixtures/worked.toml",
            "--out",
            out.path().to_str().unwrap(),
        ]);
    }
    for name in ["summary.csv", "verdicts.jsonl", "ledger.json", "buckets.csv"] {
        let a = std::fs::read(first.path().join(name)).unwrap();
        let b = std::fs::read(second.path().join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
    }
}

#[test]
fn baseline_runs_every_question_at_fixed_n() {
    let out = tempfile::tempdir().unwrap();
    let output = run_ok(&[
        "baseline",
        "--config",
        "fixtures/worked.toml",
        "--n",
        "4",
        "--out",
        out.path().to_str().unwrap(),
    ]);
    let stdout = String::from_utf8(output.stdout).unwrap();
    assert!(stdout.contains("baseline"), "{stdout}");

    let summary = std::fs::read_to_string(out.path().join("summary.csv")).unwrap();
    let row = summary.lines().nth(1).unwrap();
    assert_eq!(row, "baseline,plurality,none,4,0,4,1.000000,0,3,12,0");
}

#[test]
fn synthetic_seed_flag_is_deterministic() {
    let first = tempfile::tempdir().unwrap();
    let second = tempfile::tempdir().unwrap();
    for out in [&first, &second] {
        run_ok(&[
            "run",
            "--config",
            "fixtures/demo.toml",
            "--seed",
            "123",
            "--out",
            out.path().to_str().unwrap(),
        ]);
    }
    let a = std::fs::read(first.path().join("verdicts.jsonl")).unwrap();
    let b = std::fs::read(second.path().join("verdicts.jsonl")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn missing_dataset_exits_nonzero_naming_the_field() {
    let output = run_err(&["run", "--backend", "synthetic", "--profile", "p.json"]);
    let stderr = String::from_utf8(output.stderr).unwrap();
    assert!(stderr.contains("dataset.path"), "{stderr}");
}

#[test]
fn unknown_config_key_exits_nonzero_naming_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    std::fs::write(&config, "[policy]\nthresold = \"plurality\"\n").unwrap();
    let output = run_err(&["run", "--config", config.to_str().unwrap()]);
    let stderr = String::from_utf8(output.stderr).unwrap();
    assert!(stderr.contains("thresold"), "{stderr}");
}

#[test]
fn bad_threshold_flag_is_rejected_by_the_parser() {
    let output = run_err(&["run", "--threshold", "most-votes"]);
    let stderr = String::from_utf8(output.stderr).unwrap();
    assert!(stderr.contains("most-votes"), "{stderr}");
}

#[test]
fn backend_abort_preserves_the_partial_ledger() {
    let dir = tempfile::tempdir().unwrap();

    // Truncate the replay fixture to four transcripts per question: round
    // one succeeds, the round-two top-up misses and aborts the run.
    let full = std::fs::read_to_string(repo_root().join("fixtures/worked.fixture.jsonl")).unwrap();
    let truncated: String = full
        .lines()
        .filter(|line| {
            let ordinal: u32 = line
                .split("\"ordinal\": ")
                .nth(1)
                .unwrap()
                .split(',')
                .next()
                .unwrap()
                .parse()
                .unwrap();
            ordinal < 4
        })
        .map(|line| format!("{line}\n"))
        .collect();
    let fixture = dir.path().join("truncated.jsonl");
    std::fs::write(&fixture, truncated).unwrap();

    let out = dir.path().join("out");
    let dataset = repo_root().join("fixtures/worked.questions.jsonl");
    let output = run_err(&[
        "run",
        "--dataset",
        dataset.to_str().unwrap(),
        "--backend",
        "fixture",
        "--fixture",
        fixture.to_str().unwrap(),
        "--threshold",
        "strict-majority",
        "--initial-n",
        "4",
        "--increment",
        "2",
        "--budget-cap",
        "10",
        "--out",
        out.to_str().unwrap(),
    ]);
    let stderr = String::from_utf8(output.stderr).unwrap();
    assert!(stderr.contains("partial ledger"), "{stderr}");

    let ledger: CostLedger =
        serde_json::from_str(&std::fs::read_to_string(out.join("ledger.partial.json")).unwrap())
            .unwrap();
    assert_eq!(ledger.total, 12);
    assert_eq!(ledger.per_round.len(), 2);
    assert_eq!(ledger.per_round[0].queries, 12);
    assert_eq!(ledger.per_round[1].queries, 0);
    assert!(!out.join("verdicts.jsonl").exists());
}
