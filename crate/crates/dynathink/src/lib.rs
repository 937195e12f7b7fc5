//! Adaptive fast/slow routing of reasoning questions over step-structured
//! LLM sampling.
//!
//! Chain-of-thought self-consistency spends the same query budget on every
//! question, easy or hard. This crate implements a routing policy that
//! samples a small pool of step-marked completions per question, and
//! answers immediately — the *fast* path — when two checks pass:
//!
//! 1. **Consistency**: the extracted answers clear a vote threshold
//!    (plurality, strict majority, or unanimity).
//! 2. **Reasoning complexity**: the winning answer attains the minimum
//!    step count seen anywhere in the question's pool.
//!
//! Questions failing either check stay pending; their pools grow by a
//! fixed increment each round until a budget cap, where the survivors —
//! the *slow* path — fall back to plain self-consistency. Pools accumulate
//! across rounds, which is why total query cost never exceeds running
//! self-consistency at the cap outright.
//!
//! The crate splits into:
//! - [`types`]: plain data — questions, samples, vote distributions,
//!   policies, verdicts, cost ledgers.
//! - [`extract`]: step splitting and answer normalization.
//! - [`classify`]: the two checks and the per-round decision.
//! - [`orchestrate`]: the sampling loop and the self-consistency baseline.
//! - [`backend`]: HTTP, fixture-replay, and synthetic generators.
//! - [`dataset`]: benchmark ingestion and accuracy/bucket scoring.

pub mod backend;
pub mod classify;
pub mod dataset;
pub mod extract;
pub mod orchestrate;
pub mod types;

pub use backend::{Backend, BackendError, GenerationRequest};
pub use classify::{classify, consistency_check, min_steps_check, vote, RoundDecision};
pub use dataset::{load, score, FormatHint, ScoreReport};
pub use extract::{canonicalize_gold, count_steps, extract_answer, split_steps};
pub use orchestrate::{run, run_sc_baseline, GenerationSettings, RunError, RunOptions, RunResult};
pub use types::{
    AnswerFormat, AnswerKey, CostLedger, ParsedSample, PolicyConfig, Question, QuestionVerdict,
    RoundAudit, ThresholdMode, VerdictStatus, VerificationOrder, VoteDistribution,
};
