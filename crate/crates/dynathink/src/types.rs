//! Domain types shared across the crate: questions, parsed samples, vote
//! distributions, policy configuration, verdicts, and the query-cost ledger.
//!
//! All types are plain data, immutable after construction, and serialize
//! losslessly through serde. Invariants that cannot be enforced by the type
//! system are checked by the `validate` methods, which the loaders and the
//! replay tests call on every reload.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// An invariant violation detected by one of the `validate` methods.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum InvariantError {
    #[error("question id must be non-empty")]
    EmptyQuestionId,
    #[error("choice letters must be non-empty, uppercase and distinct, got {0:?}")]
    BadChoiceLetters(String),
    #[error("gold answer format does not match question format for {0:?}")]
    GoldFormatMismatch(String),
    #[error("sample {question_id:?}#{ordinal}: step_count {step_count} != steps.len() {len}")]
    StepCountMismatch {
        question_id: String,
        ordinal: u32,
        step_count: u32,
        len: usize,
    },
    #[error("sample {question_id:?}#{ordinal}: round must be >= 1")]
    RoundZero { question_id: String, ordinal: u32 },
    #[error("vote distribution totals are inconsistent: sum(counts)={sum}, parsed={parsed}, samples={samples}")]
    VoteTotals { sum: u32, parsed: u32, samples: u32 },
    #[error("verdict for {0:?}: queries_used does not equal pool size")]
    QueriesPoolMismatch(String),
    #[error("ledger totals are inconsistent")]
    LedgerTotals,
    #[error("invalid policy: {0}")]
    BadPolicy(String),
}

/// How a question's final answer is expressed and normalized.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerFormat {
    /// A decimal number, canonicalized to a minimal string ("3.5", "70000").
    Numeric,
    /// One letter out of a fixed set, canonicalized to uppercase.
    MultipleChoice { letters: String },
    /// "yes" or "no".
    Boolean,
    /// Free text, taken from a `\boxed{...}` group or an "answer is" phrase.
    FreeformBoxed,
}

impl AnswerFormat {
    pub fn multiple_choice(letters: &str) -> Self {
        AnswerFormat::MultipleChoice {
            letters: letters.to_string(),
        }
    }

    /// Allowed letters for multiple-choice formats, `None` otherwise.
    pub fn allowed_letters(&self) -> Option<&str> {
        match self {
            AnswerFormat::MultipleChoice { letters } => Some(letters),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), InvariantError> {
        if let AnswerFormat::MultipleChoice { letters } = self {
            let distinct_upper = !letters.is_empty()
                && letters.chars().all(|c| c.is_ascii_uppercase())
                && letters
                    .chars()
                    .enumerate()
                    .all(|(i, c)| !letters[..i].contains(c));
            if !distinct_upper {
                return Err(InvariantError::BadChoiceLetters(letters.clone()));
            }
        }
        Ok(())
    }
}

/// A normalized final answer. Equality is exact string-plus-format equality;
/// all tolerance lives in the normalization rules that produce `canonical`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AnswerKey {
    pub canonical: String,
    pub format: AnswerFormat,
}

impl AnswerKey {
    pub fn new(canonical: impl Into<String>, format: AnswerFormat) -> Self {
        AnswerKey {
            canonical: canonical.into(),
            format,
        }
    }
}

impl fmt::Display for AnswerKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical)
    }
}

/// One benchmark item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub prompt: String,
    pub answer_format: AnswerFormat,
    /// Reference answer for scoring, if the dataset provides one.
    pub gold: Option<AnswerKey>,
}

impl Question {
    pub fn validate(&self) -> Result<(), InvariantError> {
        if self.id.is_empty() {
            return Err(InvariantError::EmptyQuestionId);
        }
        self.answer_format.validate()?;
        if let Some(gold) = &self.gold {
            if gold.format != self.answer_format {
                return Err(InvariantError::GoldFormatMismatch(self.id.clone()));
            }
        }
        Ok(())
    }
}

/// One model completion, parsed into steps and a normalized answer.
///
/// `answer == None` marks an unparseable sample: it stays in the pool for
/// cost accounting but contributes no vote and is ignored by the
/// step-minimum computation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedSample {
    pub question_id: String,
    /// Round in which the sample was drawn (1-based).
    pub round: u32,
    /// Position within the question's accumulated pool (0-based).
    pub ordinal: u32,
    pub raw: String,
    pub steps: Vec<String>,
    pub step_count: u32,
    pub answer: Option<AnswerKey>,
}

impl ParsedSample {
    pub fn validate(&self) -> Result<(), InvariantError> {
        if self.step_count as usize != self.steps.len() {
            return Err(InvariantError::StepCountMismatch {
                question_id: self.question_id.clone(),
                ordinal: self.ordinal,
                step_count: self.step_count,
                len: self.steps.len(),
            });
        }
        if self.round == 0 {
            return Err(InvariantError::RoundZero {
                question_id: self.question_id.clone(),
                ordinal: self.ordinal,
            });
        }
        Ok(())
    }
}

/// Vote counts over a question's sample pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct VoteDistribution {
    /// Count per distinct extracted answer. Serialized as ordered pairs so
    /// the JSON form is stable and round-trips exactly.
    #[serde(with = "answer_count_pairs")]
    pub counts: BTreeMap<AnswerKey, u32>,
    /// Samples that produced an answer.
    pub total_parsed: u32,
    /// All samples, including unparseable ones.
    pub total_samples: u32,
}

impl VoteDistribution {
    /// The count of the most-voted answer, zero for an empty distribution.
    pub fn max_count(&self) -> u32 {
        self.counts.values().copied().max().unwrap_or(0)
    }

    /// The answer holding a strict maximum of the votes, if there is one.
    pub fn unique_top(&self) -> Option<(&AnswerKey, u32)> {
        let max = self.max_count();
        if max == 0 {
            return None;
        }
        let mut at_max = self.counts.iter().filter(|(_, c)| **c == max);
        let top = at_max.next()?;
        if at_max.next().is_some() {
            return None;
        }
        Some((top.0, max))
    }

    pub fn validate(&self) -> Result<(), InvariantError> {
        let sum: u32 = self.counts.values().sum();
        if sum != self.total_parsed || self.total_parsed > self.total_samples {
            return Err(InvariantError::VoteTotals {
                sum,
                parsed: self.total_parsed,
                samples: self.total_samples,
            });
        }
        Ok(())
    }
}

mod answer_count_pairs {
    use super::AnswerKey;
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};
    use std::collections::BTreeMap;

    pub fn serialize<S: Serializer>(
        map: &BTreeMap<AnswerKey, u32>,
        ser: S,
    ) -> Result<S::Ok, S::Error> {
        map.iter().collect::<Vec<_>>().serialize(ser)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        de: D,
    ) -> Result<BTreeMap<AnswerKey, u32>, D::Error> {
        let pairs: Vec<(AnswerKey, u32)> = Vec::deserialize(de)?;
        let len = pairs.len();
        let map: BTreeMap<AnswerKey, u32> = pairs.into_iter().collect();
        if map.len() != len {
            return Err(D::Error::custom("duplicate answer key in vote counts"));
        }
        Ok(map)
    }
}

/// Vote threshold applied by the consistency check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThresholdMode {
    /// A unique answer with strictly the most votes.
    Plurality,
    /// A unique top answer holding at least floor(n/2)+1 votes.
    StrictMajority,
    /// Every sample parsed to the same single answer.
    Unanimous,
}

impl ThresholdMode {
    pub const ALL: [ThresholdMode; 3] = [
        ThresholdMode::Plurality,
        ThresholdMode::StrictMajority,
        ThresholdMode::Unanimous,
    ];
}

impl fmt::Display for ThresholdMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ThresholdMode::Plurality => "plurality",
            ThresholdMode::StrictMajority => "strict-majority",
            ThresholdMode::Unanimous => "unanimous",
        })
    }
}

impl std::str::FromStr for ThresholdMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "plurality" => Ok(ThresholdMode::Plurality),
            "strict-majority" => Ok(ThresholdMode::StrictMajority),
            "unanimous" => Ok(ThresholdMode::Unanimous),
            other => Err(format!(
                "unknown threshold {other:?}, expected plurality | strict-majority | unanimous"
            )),
        }
    }
}

/// Which verification check runs first when classifying a round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VerificationOrder {
    #[serde(rename = "consistency-steps")]
    ConsistencyThenSteps,
    #[serde(rename = "steps-consistency")]
    StepsThenConsistency,
}

impl VerificationOrder {
    pub const ALL: [VerificationOrder; 2] = [
        VerificationOrder::ConsistencyThenSteps,
        VerificationOrder::StepsThenConsistency,
    ];
}

impl fmt::Display for VerificationOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VerificationOrder::ConsistencyThenSteps => "consistency-steps",
            VerificationOrder::StepsThenConsistency => "steps-consistency",
        })
    }
}

impl std::str::FromStr for VerificationOrder {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "consistency-steps" => Ok(VerificationOrder::ConsistencyThenSteps),
            "steps-consistency" => Ok(VerificationOrder::StepsThenConsistency),
            other => Err(format!(
                "unknown order {other:?}, expected consistency-steps | steps-consistency"
            )),
        }
    }
}

/// Strategy used to resolve questions that never classify fast.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SlowResolver {
    /// Top every pending pool up to the budget cap and take the plurality.
    #[default]
    SelfConsistencyAtCap,
}

/// Routing policy: threshold, check order, and the sampling schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub threshold_mode: ThresholdMode,
    pub verification_order: VerificationOrder,
    /// Samples per question in the first round.
    pub initial_n: u32,
    /// Extra samples per pending question each further round.
    pub increment: u32,
    /// Maximum samples ever drawn for one question.
    pub budget_cap: u32,
    #[serde(default)]
    pub slow_resolver: SlowResolver,
    /// Require the winning answer to be the only one attaining the minimum
    /// step count, instead of merely attaining it.
    #[serde(default)]
    pub strict_min_steps: bool,
    /// Keep growing n up to the cap even after a round picks no fast
    /// questions. Off by default: the stock loop stops on a zero-pick round.
    #[serde(default)]
    pub spend_to_cap: bool,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            threshold_mode: ThresholdMode::StrictMajority,
            verification_order: VerificationOrder::ConsistencyThenSteps,
            initial_n: 2,
            increment: 2,
            budget_cap: 10,
            slow_resolver: SlowResolver::SelfConsistencyAtCap,
            strict_min_steps: false,
            spend_to_cap: false,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<(), InvariantError> {
        if self.initial_n < 1 {
            return Err(InvariantError::BadPolicy("initial_n must be >= 1".into()));
        }
        if self.increment < 1 {
            return Err(InvariantError::BadPolicy("increment must be >= 1".into()));
        }
        if self.budget_cap < self.initial_n {
            return Err(InvariantError::BadPolicy(
                "budget_cap must be >= initial_n".into(),
            ));
        }
        Ok(())
    }

    /// Upper bound on the number of classification rounds the loop can run.
    pub fn max_rounds(&self) -> u32 {
        (self.budget_cap - self.initial_n).div_ceil(self.increment) + 1
    }
}

/// Outcome of the two verification checks for one round of one question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundAudit {
    pub round: u32,
    /// Pool size when the round was classified.
    pub n: u32,
    pub votes: VoteDistribution,
    /// Consistency check outcome; `None` when the check never ran.
    pub consistency_ok: Option<bool>,
    /// Step-minimum check outcome; `None` when the check never ran.
    pub min_steps_ok: Option<bool>,
    /// The answer that went fast this round, if any.
    pub fast_answer: Option<AnswerKey>,
}

/// Final routing decision for one question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictStatus {
    /// Passed both checks at `round`; answered from a partial budget.
    Fast { answer: AnswerKey, round: u32 },
    /// Resolved by self-consistency at the budget cap. `answer` is `None`
    /// when not a single sample parsed; such questions score as incorrect.
    Slow { answer: Option<AnswerKey> },
}

impl VerdictStatus {
    pub fn answer(&self) -> Option<&AnswerKey> {
        match self {
            VerdictStatus::Fast { answer, .. } => Some(answer),
            VerdictStatus::Slow { answer } => answer.as_ref(),
        }
    }

    pub fn is_fast(&self) -> bool {
        matches!(self, VerdictStatus::Fast { .. })
    }
}

/// The full record of how one question was routed and answered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionVerdict {
    pub question_id: String,
    pub status: VerdictStatus,
    pub queries_used: u64,
    /// Every sample ever drawn for the question, in draw order.
    pub pool: Vec<ParsedSample>,
    /// One entry per classification round the question participated in.
    pub audit: Vec<RoundAudit>,
}

impl QuestionVerdict {
    pub fn answer(&self) -> Option<&AnswerKey> {
        self.status.answer()
    }

    pub fn validate(&self) -> Result<(), InvariantError> {
        if self.queries_used != self.pool.len() as u64 {
            return Err(InvariantError::QueriesPoolMismatch(self.question_id.clone()));
        }
        for sample in &self.pool {
            sample.validate()?;
            if sample.question_id != self.question_id {
                return Err(InvariantError::QueriesPoolMismatch(self.question_id.clone()));
            }
        }
        for audit in &self.audit {
            audit.votes.validate()?;
        }
        Ok(())
    }
}

/// Queries issued during one round, across all questions still pending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundCost {
    pub round: u32,
    /// Questions pending when the round started.
    pub pending: u32,
    pub queries: u64,
}

/// Query counts for a whole run. The unit is one completion request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct CostLedger {
    pub per_question: BTreeMap<String, u64>,
    pub total: u64,
    pub per_round: Vec<RoundCost>,
}

impl CostLedger {
    pub fn new() -> Self {
        CostLedger::default()
    }

    /// Open a per-round entry. Queries recorded afterwards accrue to it.
    pub fn begin_round(&mut self, round: u32, pending: u32) {
        self.per_round.push(RoundCost {
            round,
            pending,
            queries: 0,
        });
    }

    /// Record `k` completions drawn for `question_id` in the open round.
    pub fn record(&mut self, question_id: &str, k: u64) {
        *self.per_question.entry(question_id.to_string()).or_insert(0) += k;
        self.total += k;
        if let Some(last) = self.per_round.last_mut() {
            last.queries += k;
        }
    }

    pub fn validate(&self) -> Result<(), InvariantError> {
        let by_question: u64 = self.per_question.values().sum();
        let by_round: u64 = self.per_round.iter().map(|r| r.queries).sum();
        if by_question != self.total || by_round != self.total {
            return Err(InvariantError::LedgerTotals);
        }
        Ok(())
    }
}
