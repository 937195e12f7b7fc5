//! Command execution: load the dataset, build a backend, run the policy,
//! and persist the artifacts.

use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context, Result};

use dynathink::backend::fixture::FixtureBackend;
use dynathink::backend::http::HttpBackend;
use dynathink::backend::synthetic::{SyntheticBackend, SyntheticProfileFile};
use dynathink::backend::Backend;
use dynathink::dataset::{load, score, ScoreReport};
use dynathink::orchestrate::{run, run_sc_baseline, RunError, RunOptions, RunResult};
use dynathink::types::{PolicyConfig, Question, ThresholdMode, VerificationOrder};

use crate::artifacts::{self, SummaryRow};
use crate::config::{BackendChoice, Effective};

fn load_questions(effective: &Effective) -> Result<Vec<Question>> {
    load(&effective.dataset_path, effective.format).with_context(|| {
        format!("loading dataset {}", effective.dataset_path.display())
    })
}

fn build_backend(
    choice: &BackendChoice,
    seed: Option<u64>,
    questions: &[Question],
) -> Result<Box<dyn Backend>> {
    Ok(match choice {
        BackendChoice::Fixture { path } => Box::new(
            FixtureBackend::from_path(path)
                .with_context(|| format!("loading fixture {}", path.display()))?,
        ),
        BackendChoice::Synthetic { profile } => {
            let file = SyntheticProfileFile::from_path(profile)
                .with_context(|| format!("loading profile {}", profile.display()))?;
            let mut backend = SyntheticBackend::new(file, questions)
                .with_context(|| format!("compiling profile {}", profile.display()))?;
            if let Some(seed) = seed {
                backend = backend.with_seed(seed);
            }
            Box::new(backend)
        }
        BackendChoice::Http(config) => {
            Box::new(HttpBackend::new(config.clone()).context("building http backend")?)
        }
    })
}

/// Run the orchestration future; on a backend abort, persist the partial
/// ledger before surfacing the error.
async fn run_or_preserve<F>(future: F, out: &Path) -> Result<(RunResult, u64)>
where
    F: std::future::Future<Output = Result<RunResult, RunError>>,
{
    let started = Instant::now();
    match future.await {
        Ok(result) => Ok((result, started.elapsed().as_secs())),
        Err(RunError::BackendAborted { source, partial_ledger }) => {
            let path = out.join("ledger.partial.json");
            artifacts::write_ledger(&path, &partial_ledger)?;
            bail!(
                "backend aborted after {} queries (partial ledger written to {}): {source}",
                partial_ledger.total,
                path.display()
            );
        }
        Err(other) => Err(other.into()),
    }
}

fn summarize(
    policy_label: &str,
    policy: &PolicyConfig,
    report: &ScoreReport,
    wall_time: u64,
) -> SummaryRow {
    SummaryRow {
        policy: policy_label.to_string(),
        threshold_mode: policy.threshold_mode.to_string(),
        order: policy.verification_order.to_string(),
        initial_n: policy.initial_n,
        increment: policy.increment,
        budget_cap: policy.budget_cap,
        accuracy: report.accuracy(),
        fast_count: report.fast_count,
        slow_count: report.slow_count,
        total_queries: report.total_queries,
        wall_time,
    }
}

fn write_run_artifacts(
    out: &Path,
    questions: &[Question],
    result: &RunResult,
    report: &ScoreReport,
    row: SummaryRow,
) -> Result<()> {
    artifacts::write_verdicts(&out.join("verdicts.jsonl"), questions, &result.verdicts)?;
    artifacts::write_ledger(&out.join("ledger.json"), &result.ledger)?;
    artifacts::write_summary(&out.join("summary.csv"), &[row])?;
    artifacts::write_buckets(&out.join("buckets.csv"), report)?;
    Ok(())
}

fn report_line(label: &str, report: &ScoreReport, out: &Path) -> String {
    format!(
        "{label}: accuracy {:.6} ({}/{}), fast {}, slow {}, {} queries -> {}",
        report.accuracy(),
        report.correct,
        report.total,
        report.fast_count,
        report.slow_count,
        report.total_queries,
        out.display()
    )
}

pub async fn cmd_run(effective: &Effective) -> Result<String> {
    let questions = load_questions(effective)?;
    let backend = build_backend(&effective.backend, effective.seed, &questions)?;
    std::fs::create_dir_all(&effective.out)
        .with_context(|| format!("creating {}", effective.out.display()))?;

    let options = RunOptions {
        policy: effective.policy.clone(),
        generation: effective.generation.clone(),
    };
    tracing::info!(
        questions = questions.len(),
        threshold = %effective.policy.threshold_mode,
        order = %effective.policy.verification_order,
        budget_cap = effective.policy.budget_cap,
        "starting adaptive run"
    );
    let (result, wall_time) =
        run_or_preserve(run(&questions, backend.as_ref(), &options), &effective.out).await?;
    let report = score(&result.verdicts, &questions)?;
    let row = summarize("dynathink", &effective.policy, &report, wall_time);
    write_run_artifacts(&effective.out, &questions, &result, &report, row)?;
    Ok(report_line("dynathink", &report, &effective.out))
}

pub async fn cmd_baseline(effective: &Effective, n: Option<u32>) -> Result<String> {
    let n = n.unwrap_or(effective.policy.budget_cap);
    let questions = load_questions(effective)?;
    let backend = build_backend(&effective.backend, effective.seed, &questions)?;
    std::fs::create_dir_all(&effective.out)
        .with_context(|| format!("creating {}", effective.out.display()))?;

    let (result, wall_time) = run_or_preserve(
        run_sc_baseline(&questions, backend.as_ref(), n, &effective.generation),
        &effective.out,
    )
    .await?;
    let report = score(&result.verdicts, &questions)?;
    // The baseline takes a plurality vote over a fixed-size pool; the
    // adaptive columns are filled with the values that describe that shape.
    let row = SummaryRow {
        policy: "baseline".to_string(),
        threshold_mode: ThresholdMode::Plurality.to_string(),
        order: "none".to_string(),
        initial_n: n,
        increment: 0,
        budget_cap: n,
        accuracy: report.accuracy(),
        fast_count: report.fast_count,
        slow_count: report.slow_count,
        total_queries: report.total_queries,
        wall_time,
    };
    write_run_artifacts(&effective.out, &questions, &result, &report, row)?;
    Ok(report_line("baseline", &report, &effective.out))
}

/// Grid order: threshold mode, then verification order, then the cap list
/// as given. Each cell replays the same dataset/backend/seed.
pub async fn cmd_sweep(effective: &Effective) -> Result<String> {
    let questions = load_questions(effective)?;
    std::fs::create_dir_all(&effective.out)
        .with_context(|| format!("creating {}", effective.out.display()))?;

    let mut rows = Vec::new();
    for mode in ThresholdMode::ALL {
        for order in VerificationOrder::ALL {
            for &cap in &effective.sweep_caps {
                let policy = PolicyConfig {
                    threshold_mode: mode,
                    verification_order: order,
                    budget_cap: cap,
                    ..effective.policy.clone()
                };
                policy
                    .validate()
                    .map_err(|e| anyhow::anyhow!("sweep cell {mode}/{order}/cap {cap}: {e}"))?;
                let backend = build_backend(&effective.backend, effective.seed, &questions)?;
                let options = RunOptions {
                    policy: policy.clone(),
                    generation: effective.generation.clone(),
                };
                tracing::info!(%mode, %order, cap, "running sweep cell");
                let (result, wall_time) =
                    run_or_preserve(run(&questions, backend.as_ref(), &options), &effective.out)
                        .await?;
                let report = score(&result.verdicts, &questions)?;
                let buckets_name = format!("buckets-{mode}-{order}-cap{cap}.csv");
                artifacts::write_buckets(&effective.out.join(buckets_name), &report)?;
                rows.push(summarize("dynathink", &policy, &report, wall_time));
            }
        }
    }
    artifacts::write_summary(&effective.out.join("summary.csv"), &rows)?;
    Ok(format!(
        "sweep: {} cells ({} thresholds x {} orders x {} caps) -> {}",
        rows.len(),
        ThresholdMode::ALL.len(),
        VerificationOrder::ALL.len(),
        effective.sweep_caps.len(),
        effective.out.display()
    ))
}
