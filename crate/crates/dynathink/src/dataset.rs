//! Benchmark ingestion and scoring.
//!
//! The canonical input is JSON Lines with `{"id"?, "question", "answer",
//! "choices"?}` per row; converters from native dataset layouts are
//! user-side scripts. Gold answers normalize through the same
//! canonicalization as extraction, so scoring is exact key equality.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::extract::canonicalize_gold;
use crate::types::{AnswerFormat, Question, QuestionVerdict, VerdictStatus};

/// Which answer format a dataset's rows use. Distinct from [`AnswerFormat`]
/// because multiple-choice letter sets are derived per file from the
/// `choices` column.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FormatHint {
    Numeric,
    MultipleChoice,
    Boolean,
    FreeformBoxed,
}

impl std::fmt::Display for FormatHint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FormatHint::Numeric => "numeric",
            FormatHint::MultipleChoice => "multiple-choice",
            FormatHint::Boolean => "boolean",
            FormatHint::FreeformBoxed => "freeform",
        })
    }
}

impl std::str::FromStr for FormatHint {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "numeric" => Ok(FormatHint::Numeric),
            "multiple-choice" => Ok(FormatHint::MultipleChoice),
            "boolean" => Ok(FormatHint::Boolean),
            "freeform" => Ok(FormatHint::FreeformBoxed),
            other => Err(format!(
                "unknown format {other:?}, expected numeric | multiple-choice | boolean | freeform"
            )),
        }
    }
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("line {line}: missing key {key:?}")]
    MissingKey { line: usize, key: &'static str },
    #[error("line {line}: {detail}")]
    BadLine { line: usize, detail: String },
    #[error("duplicate question id {0:?}")]
    DuplicateId(String),
    #[error("verdict {0:?} has no matching question with a gold answer")]
    MissingGold(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Deserialize)]
struct Row {
    id: Option<String>,
    question: Option<String>,
    answer: Option<serde_json::Value>,
    choices: Option<Vec<String>>,
}

/// Load a JSON Lines question file. Rows without an `id` get one derived
/// from their line number. Gold answers are canonicalized for the hinted
/// format; a gold that fails to canonicalize is a data error, not a silent
/// always-wrong question.
pub fn load(path: impl AsRef<Path>, hint: FormatHint) -> Result<Vec<Question>, DatasetError> {
    let body = std::fs::read_to_string(path)?;
    let mut questions = Vec::new();
    let mut seen = BTreeMap::new();
    for (index, line) in body.lines().enumerate() {
        let line_no = index + 1;
        if line.trim().is_empty() {
            continue;
        }
        let row: Row = serde_json::from_str(line).map_err(|e| DatasetError::BadLine {
            line: line_no,
            detail: e.to_string(),
        })?;
        let prompt = row.question.ok_or(DatasetError::MissingKey {
            line: line_no,
            key: "question",
        })?;
        let answer = row.answer.ok_or(DatasetError::MissingKey {
            line: line_no,
            key: "answer",
        })?;
        let answer = match answer {
            serde_json::Value::String(s) => s,
            other => other.to_string(),
        };
        let format = resolve_format(hint, row.choices.as_deref(), line_no)?;
        let gold = canonicalize_gold(&answer, &format).ok_or_else(|| DatasetError::BadLine {
            line: line_no,
            detail: format!("gold answer {answer:?} does not canonicalize under {format:?}"),
        })?;
        let id = row.id.unwrap_or_else(|| format!("line-{line_no}"));
        if seen.insert(id.clone(), ()).is_some() {
            return Err(DatasetError::DuplicateId(id));
        }
        let question = Question {
            id,
            prompt,
            answer_format: format,
            gold: Some(gold),
        };
        question.validate().map_err(|e| DatasetError::BadLine {
            line: line_no,
            detail: e.to_string(),
        })?;
        questions.push(question);
    }
    Ok(questions)
}

/// Choice letters come from the row's choices: entries that are already
/// single letters are used directly, anything else maps onto A, B, C, ...
fn resolve_format(
    hint: FormatHint,
    choices: Option<&[String]>,
    line: usize,
) -> Result<AnswerFormat, DatasetError> {
    match hint {
        FormatHint::Numeric => Ok(AnswerFormat::Numeric),
        FormatHint::Boolean => Ok(AnswerFormat::Boolean),
        FormatHint::FreeformBoxed => Ok(AnswerFormat::FreeformBoxed),
        FormatHint::MultipleChoice => {
            let choices = choices.ok_or(DatasetError::MissingKey { line, key: "choices" })?;
            if choices.len() < 2 || choices.len() > 26 {
                return Err(DatasetError::BadLine {
                    line,
                    detail: format!("need 2..=26 choices, got {}", choices.len()),
                });
            }
            let single_letters: Option<String> = choices
                .iter()
                .map(|c| {
                    let mut chars = c.trim().chars();
                    match (chars.next(), chars.next()) {
                        (Some(ch), None) if ch.is_ascii_alphabetic() => {
                            Some(ch.to_ascii_uppercase())
                        }
                        _ => None,
                    }
                })
                .collect();
            let letters = single_letters
                .unwrap_or_else(|| ('A'..).take(choices.len()).collect());
            let format = AnswerFormat::MultipleChoice { letters };
            format.validate().map_err(|e| DatasetError::BadLine {
                line,
                detail: e.to_string(),
            })?;
            Ok(format)
        }
    }
}

/// Accuracy within one reasoning-step bucket.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct StepBucket {
    /// Minimum step count among the samples supporting the verdict's
    /// answer; 0 for verdicts with no answer at all.
    pub step_count: u32,
    pub total: u32,
    pub correct: u32,
}

impl StepBucket {
    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            f64::from(self.correct) / f64::from(self.total)
        }
    }
}

/// Scoring report over a run's verdicts.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ScoreReport {
    pub total: u32,
    pub correct: u32,
    pub fast_count: u32,
    pub fast_correct: u32,
    pub slow_count: u32,
    pub slow_correct: u32,
    pub total_queries: u64,
    /// Ascending by step count; totals sum to `total` exactly.
    pub buckets: Vec<StepBucket>,
}

impl ScoreReport {
    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            f64::from(self.correct) / f64::from(self.total)
        }
    }

    pub fn fast_accuracy(&self) -> Option<f64> {
        (self.fast_count > 0).then(|| f64::from(self.fast_correct) / f64::from(self.fast_count))
    }

    pub fn slow_accuracy(&self) -> Option<f64> {
        (self.slow_count > 0).then(|| f64::from(self.slow_correct) / f64::from(self.slow_count))
    }
}

/// Score verdicts against their questions' gold answers.
///
/// Every verdict must correspond to a question carrying a gold answer.
/// A verdict with no answer (nothing parsed) scores as incorrect.
pub fn score(
    verdicts: &BTreeMap<String, QuestionVerdict>,
    questions: &[Question],
) -> Result<ScoreReport, DatasetError> {
    let by_id: BTreeMap<&str, &Question> =
        questions.iter().map(|q| (q.id.as_str(), q)).collect();
    let mut report = ScoreReport {
        total: 0,
        correct: 0,
        fast_count: 0,
        fast_correct: 0,
        slow_count: 0,
        slow_correct: 0,
        total_queries: 0,
        buckets: Vec::new(),
    };
    let mut buckets: BTreeMap<u32, (u32, u32)> = BTreeMap::new();
    for (id, verdict) in verdicts {
        let gold = by_id
            .get(id.as_str())
            .and_then(|q| q.gold.as_ref())
            .ok_or_else(|| DatasetError::MissingGold(id.clone()))?;
        let answer = verdict.answer();
        let correct = answer == Some(gold);
        let bucket_key = answer
            .and_then(|a| {
                verdict
                    .pool
                    .iter()
                    .filter(|s| s.answer.as_ref() == Some(a))
                    .map(|s| s.step_count)
                    .min()
            })
            .unwrap_or(0);
        let bucket = buckets.entry(bucket_key).or_insert((0, 0));
        bucket.0 += 1;
        report.total += 1;
        report.total_queries += verdict.queries_used;
        if correct {
            report.correct += 1;
            bucket.1 += 1;
        }
        match verdict.status {
            VerdictStatus::Fast { .. } => {
                report.fast_count += 1;
                report.fast_correct += u32::from(correct);
            }
            VerdictStatus::Slow { .. } => {
                report.slow_count += 1;
                report.slow_correct += u32::from(correct);
            }
        }
    }
    report.buckets = buckets
        .into_iter()
        .map(|(step_count, (total, correct))| StepBucket {
            step_count,
            total,
            correct,
        })
        .collect();
    Ok(report)
}
