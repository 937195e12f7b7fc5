//! Artifact writers.
//!
//! Every file here is written deterministically: verdict lines follow the
//! input question order, floats are rendered at a fixed precision, and the
//! wall-time column records whole elapsed seconds so that replaying the
//! same fixture yields byte-identical output.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{Context, Result};

use dynathink::dataset::ScoreReport;
use dynathink::types::{CostLedger, Question, QuestionVerdict};

/// One row of `summary.csv`.
#[derive(Debug, Clone)]
pub struct SummaryRow {
    pub policy: String,
    pub threshold_mode: String,
    pub order: String,
    pub initial_n: u32,
    pub increment: u32,
    pub budget_cap: u32,
    pub accuracy: f64,
    pub fast_count: u32,
    pub slow_count: u32,
    pub total_queries: u64,
    pub wall_time: u64,
}

const SUMMARY_HEADER: [&str; 11] = [
    "policy",
    "threshold_mode",
    "order",
    "initial_n",
    "increment",
    "budget_cap",
    "accuracy",
    "fast_count",
    "slow_count",
    "total_queries",
    "wall_time",
];

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)
        .with_context(|| format!("creating {}", path.display()))?;
    writer.write_record(SUMMARY_HEADER)?;
    for row in rows {
        writer.write_record([
            row.policy.clone(),
            row.threshold_mode.clone(),
            row.order.clone(),
            row.initial_n.to_string(),
            row.increment.to_string(),
            row.budget_cap.to_string(),
            format!("{:.6}", row.accuracy),
            row.fast_count.to_string(),
            row.slow_count.to_string(),
            row.total_queries.to_string(),
            row.wall_time.to_string(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

/// Step-count buckets: accuracy of verdicts whose winning answer was
/// backed by a given minimum reasoning length.
pub fn write_buckets(path: &Path, report: &ScoreReport) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)
        .with_context(|| format!("creating {}", path.display()))?;
    writer.write_record(["step_count", "total", "correct", "accuracy"])?;
    for bucket in &report.buckets {
        writer.write_record([
            bucket.step_count.to_string(),
            bucket.total.to_string(),
            bucket.correct.to_string(),
            format!("{:.6}", bucket.accuracy()),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

/// One verdict JSON object per line, in input question order.
pub fn write_verdicts(
    path: &Path,
    questions: &[Question],
    verdicts: &BTreeMap<String, QuestionVerdict>,
) -> Result<()> {
    let mut body = String::new();
    for question in questions {
        let verdict = verdicts
            .get(&question.id)
            .with_context(|| format!("missing verdict for question {:?}", question.id))?;
        body.push_str(&serde_json::to_string(verdict)?);
        body.push('\n');
    }
    std::fs::write(path, body).with_context(|| format!("writing {}", path.display()))
}

pub fn write_ledger(path: &Path, ledger: &CostLedger) -> Result<()> {
    let mut body = serde_json::to_string_pretty(ledger)?;
    body.push('\n');
    std::fs::write(path, body).with_context(|| format!("writing {}", path.display()))
}
