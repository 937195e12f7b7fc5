//! The outer sampling loop: per-round generation, budget growth, fast-set
//! extraction, termination, and slow-question resolution.
//!
//! Each round tops every pending question's pool up to the round's n,
//! classifies every pending pool, and moves passing questions to the fast
//! set. The loop continues while at least one question classified fast and
//! the budget cap is unreached; survivors are resolved by self-consistency
//! over a pool topped up to the cap. Pools only ever grow — samples are
//! never discarded or redrawn, so step minima span all generations.
//!
//! Within a round, generation runs concurrently across questions
//! (`buffer_unordered`), but samples are appended and recorded in question
//! order, keeping ledgers and verdicts deterministic for deterministic
//! backends regardless of completion order.

use std::collections::{BTreeMap, HashMap};

use futures::stream::{self, StreamExt};
use thiserror::Error;

use crate::backend::{build_prompt, Backend, BackendError, GenerationRequest};
use crate::classify::{classify_round, plurality_with_tie_breaks, RoundDecision};
use crate::extract::{extract_answer, split_steps};
use crate::types::{
    CostLedger, InvariantError, ParsedSample, PolicyConfig, Question, QuestionVerdict, RoundAudit,
    VerdictStatus,
};

/// Decoding and transport parameters shared by every generation request in
/// a run.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationSettings {
    pub temperature: f64,
    pub max_tokens: u32,
    pub model_id: String,
    /// Optional few-shot exemplar block prepended to every prompt.
    pub prompt_prefix: Option<String>,
    /// Questions fanned out concurrently within a round.
    pub concurrency: usize,
}

impl Default for GenerationSettings {
    fn default() -> Self {
        GenerationSettings {
            temperature: 0.7,
            max_tokens: 1024,
            model_id: "default".to_string(),
            prompt_prefix: None,
            concurrency: 16,
        }
    }
}

/// Everything a run needs beyond the questions and the backend.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOptions {
    pub policy: PolicyConfig,
    pub generation: GenerationSettings,
}

impl RunOptions {
    pub fn with_policy(policy: PolicyConfig) -> Self {
        RunOptions {
            policy,
            generation: GenerationSettings::default(),
        }
    }
}

/// Verdicts plus the query-cost ledger for one completed run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub verdicts: BTreeMap<String, QuestionVerdict>,
    pub ledger: CostLedger,
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("question set is empty")]
    EmptyQuestionSet,
    #[error("duplicate question id {0:?}")]
    DuplicateQuestionId(String),
    #[error("invalid input: {0}")]
    Invalid(#[from] InvariantError),
    #[error("invalid run options: {0}")]
    InvalidOptions(String),
    #[error(
        "backend aborted the run ({} queries recorded before the failure): {source}",
        partial_ledger.total
    )]
    BackendAborted {
        #[source]
        source: BackendError,
        /// Queries that succeeded before the abort, for cost forensics.
        partial_ledger: Box<CostLedger>,
    },
}

struct QuestionState {
    question: Question,
    pool: Vec<ParsedSample>,
    audit: Vec<RoundAudit>,
    status: Option<VerdictStatus>,
}

/// Run the adaptive fast/slow policy over a question set.
pub async fn run(
    questions: &[Question],
    backend: &dyn Backend,
    options: &RunOptions,
) -> Result<RunResult, RunError> {
    validate_inputs(questions, options, options.policy.budget_cap)?;
    let policy = &options.policy;

    let mut states: BTreeMap<String, QuestionState> = questions
        .iter()
        .map(|q| {
            (
                q.id.clone(),
                QuestionState {
                    question: q.clone(),
                    pool: Vec::new(),
                    audit: Vec::new(),
                    status: None,
                },
            )
        })
        .collect();
    let mut ledger = CostLedger::new();
    let mut pending: Vec<String> = questions.iter().map(|q| q.id.clone()).collect();
    let mut n = policy.initial_n;
    let mut round = 1u32;

    loop {
        ledger.begin_round(round, pending.len() as u32);
        extend_pools(backend, options, &mut states, &pending, n, round, &mut ledger).await?;

        let mut next_pending = Vec::with_capacity(pending.len());
        let mut any_fast = false;
        for id in &pending {
            let state = states.get_mut(id).expect("pending id has state");
            let outcome = classify_round(&state.pool, n, policy);
            let fast_answer = match &outcome.decision {
                RoundDecision::Fast(answer) => Some(answer.clone()),
                RoundDecision::Pending => None,
            };
            state.audit.push(RoundAudit {
                round,
                n,
                votes: outcome.votes,
                consistency_ok: outcome.consistency_ok,
                min_steps_ok: outcome.min_steps_ok,
                fast_answer,
            });
            match outcome.decision {
                RoundDecision::Fast(answer) => {
                    tracing::debug!(question = %id, round, "classified fast");
                    state.status = Some(VerdictStatus::Fast { answer, round });
                    any_fast = true;
                }
                RoundDecision::Pending => next_pending.push(id.clone()),
            }
        }
        pending = next_pending;

        if pending.is_empty() || n >= policy.budget_cap {
            break;
        }
        // Algorithm stop: a round that moved nothing to the fast set ends
        // the loop even with budget remaining, unless spend_to_cap opts
        // into exhausting the cap anyway.
        if !any_fast && !policy.spend_to_cap {
            break;
        }
        n = (n + policy.increment).min(policy.budget_cap);
        round += 1;
    }

    // Slow resolution: self-consistency over pools topped up to the cap.
    if !pending.is_empty() {
        if n < policy.budget_cap {
            ledger.begin_round(round + 1, pending.len() as u32);
            extend_pools(
                backend,
                options,
                &mut states,
                &pending,
                policy.budget_cap,
                round + 1,
                &mut ledger,
            )
            .await?;
        }
        for id in &pending {
            let state = states.get_mut(id).expect("pending id has state");
            let answer = plurality_with_tie_breaks(&state.pool);
            if answer.is_none() {
                tracing::warn!(question = %id, "no sample parsed; verdict has no answer");
            }
            state.status = Some(VerdictStatus::Slow { answer });
        }
    }

    finish(questions, states, ledger)
}

/// Self-consistency baseline: exactly `n` samples per question, plurality
/// answer with the same tie-breaks as slow resolution.
pub async fn run_sc_baseline(
    questions: &[Question],
    backend: &dyn Backend,
    n: u32,
    generation: &GenerationSettings,
) -> Result<RunResult, RunError> {
    if n < 1 {
        return Err(RunError::InvalidOptions("baseline n must be >= 1".to_string()));
    }
    let options = RunOptions {
        policy: PolicyConfig {
            initial_n: n,
            budget_cap: n,
            ..PolicyConfig::default()
        },
        generation: generation.clone(),
    };
    validate_inputs(questions, &options, n)?;

    let mut states: BTreeMap<String, QuestionState> = questions
        .iter()
        .map(|q| {
            (
                q.id.clone(),
                QuestionState {
                    question: q.clone(),
                    pool: Vec::new(),
                    audit: Vec::new(),
                    status: None,
                },
            )
        })
        .collect();
    let ids: Vec<String> = questions.iter().map(|q| q.id.clone()).collect();
    let mut ledger = CostLedger::new();
    ledger.begin_round(1, ids.len() as u32);
    extend_pools(backend, &options, &mut states, &ids, n, 1, &mut ledger).await?;

    for state in states.values_mut() {
        let votes = crate::classify::vote(&state.pool);
        state.audit.push(RoundAudit {
            round: 1,
            n,
            votes,
            consistency_ok: None,
            min_steps_ok: None,
            fast_answer: None,
        });
        state.status = Some(VerdictStatus::Slow {
            answer: plurality_with_tie_breaks(&state.pool),
        });
    }
    finish(questions, states, ledger)
}

fn validate_inputs(
    questions: &[Question],
    options: &RunOptions,
    effective_cap: u32,
) -> Result<(), RunError> {
    if questions.is_empty() {
        return Err(RunError::EmptyQuestionSet);
    }
    let mut seen = HashMap::with_capacity(questions.len());
    for question in questions {
        question.validate()?;
        if seen.insert(&question.id, ()).is_some() {
            return Err(RunError::DuplicateQuestionId(question.id.clone()));
        }
    }
    options.policy.validate()?;
    if effective_cap > 1 && options.generation.temperature <= 0.0 {
        return Err(RunError::InvalidOptions(
            "temperature must be > 0 when the budget allows multiple samples per question"
                .to_string(),
        ));
    }
    Ok(())
}

/// Top every listed question's pool up to `target` samples, recording
/// successful queries in the ledger. Generation fans out concurrently;
/// results are applied in question order. The first failure (in question
/// order) aborts with the partial ledger.
async fn extend_pools(
    backend: &dyn Backend,
    options: &RunOptions,
    states: &mut BTreeMap<String, QuestionState>,
    ids: &[String],
    target: u32,
    round: u32,
    ledger: &mut CostLedger,
) -> Result<(), RunError> {
    struct Job {
        id: String,
        start: u32,
        request: GenerationRequest,
    }

    let jobs: Vec<Job> = ids
        .iter()
        .filter_map(|id| {
            let state = &states[id];
            let have = state.pool.len() as u32;
            let k = target.saturating_sub(have);
            (k > 0).then(|| Job {
                id: id.clone(),
                start: have,
                request: GenerationRequest {
                    prompt: build_prompt(&state.question, options.generation.prompt_prefix.as_deref()),
                    k,
                    temperature: options.generation.temperature,
                    max_tokens: options.generation.max_tokens,
                    model_id: options.generation.model_id.clone(),
                },
            })
        })
        .collect();

    let mut outcomes: HashMap<String, Result<Vec<String>, BackendError>> = stream::iter(
        jobs.into_iter().map(|job| async move {
            let result = backend.generate(&job.id, job.start, &job.request).await;
            (job.id, result)
        }),
    )
    .buffer_unordered(options.generation.concurrency.max(1))
    .collect::<Vec<_>>()
    .await
    .into_iter()
    .collect();

    let mut abort: Option<BackendError> = None;
    for id in ids {
        let Some(outcome) = outcomes.remove(id) else {
            continue; // nothing requested for this question
        };
        match outcome {
            Ok(texts) => {
                let state = states.get_mut(id).expect("id has state");
                ledger.record(id, texts.len() as u64);
                for text in texts {
                    let steps = split_steps(&text);
                    let answer = extract_answer(&text, &state.question.answer_format);
                    state.pool.push(ParsedSample {
                        question_id: id.clone(),
                        round,
                        ordinal: state.pool.len() as u32,
                        step_count: steps.len() as u32,
                        steps,
                        answer,
                        raw: text,
                    });
                }
            }
            Err(e) => {
                // Keep scanning so the ledger still absorbs... nothing:
                // later successes were already collected above; only the
                // first failure in question order is reported.
                abort.get_or_insert(e);
            }
        }
    }
    if let Some(source) = abort {
        return Err(RunError::BackendAborted {
            source,
            partial_ledger: Box::new(std::mem::take(ledger)),
        });
    }
    Ok(())
}

fn finish(
    questions: &[Question],
    mut states: BTreeMap<String, QuestionState>,
    ledger: CostLedger,
) -> Result<RunResult, RunError> {
    let mut verdicts = BTreeMap::new();
    for question in questions {
        let state = states.remove(&question.id).expect("every question has state");
        let verdict = QuestionVerdict {
            question_id: question.id.clone(),
            status: state.status.expect("every question classified"),
            queries_used: state.pool.len() as u64,
            pool: state.pool,
            audit: state.audit,
        };
        debug_assert!(verdict.validate().is_ok());
        verdicts.insert(question.id.clone(), verdict);
    }
    debug_assert!(ledger.validate().is_ok());
    Ok(RunResult { verdicts, ledger })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::fixture::{FixtureBackend, FixtureRecord};
    use crate::backend::synthetic::{populations, SyntheticBackend};
    use crate::types::{AnswerFormat, AnswerKey, ThresholdMode, VerificationOrder};
    use async_trait::async_trait;
    use std::sync::Mutex;

    fn mc_question(id: &str, letters: &str) -> Question {
        Question {
            id: id.to_string(),
            prompt: format!("question {id}"),
            answer_format: AnswerFormat::multiple_choice(letters),
            gold: Some(AnswerKey::new("A", AnswerFormat::multiple_choice(letters))),
        }
    }

    fn key(letter: char) -> AnswerKey {
        AnswerKey::new(letter.to_string(), AnswerFormat::multiple_choice("AB"))
    }

    /// Transcript with `steps` steps concluding in choice `letter`.
    fn transcript(letter: char, steps: u32) -> String {
        let mut lines: Vec<String> = (1..steps)
            .map(|i| format!("Step {i}: intermediate reasoning."))
            .collect();
        lines.push(format!("Step {steps}: The answer is ({letter})."));
        lines.join("\n")
    }

    fn records(question_id: &str, samples: &[(char, u32)]) -> Vec<FixtureRecord> {
        samples
            .iter()
            .enumerate()
            .map(|(ordinal, (letter, steps))| FixtureRecord {
                question_id: question_id.to_string(),
                ordinal: ordinal as u32,
                text: transcript(*letter, *steps),
            })
            .collect()
    }

    fn options(initial_n: u32, increment: u32, budget_cap: u32) -> RunOptions {
        RunOptions::with_policy(PolicyConfig {
            threshold_mode: ThresholdMode::StrictMajority,
            verification_order: VerificationOrder::ConsistencyThenSteps,
            initial_n,
            increment,
            budget_cap,
            ..PolicyConfig::default()
        })
    }

    /// Records every generate call so tests can assert the request plan.
    struct Recording<B> {
        inner: B,
        calls: Mutex<Vec<(String, u32, u32)>>,
    }

    impl<B> Recording<B> {
        fn new(inner: B) -> Self {
            Recording {
                inner,
                calls: Mutex::new(Vec::new()),
            }
        }
    }

    #[async_trait]
    impl<B: Backend> Backend for Recording<B> {
        async fn generate(
            &self,
            question_id: &str,
            start_ordinal: u32,
            request: &GenerationRequest,
        ) -> Result<Vec<String>, BackendError> {
            self.calls
                .lock()
                .unwrap()
                .push((question_id.to_string(), start_ordinal, request.k));
            self.inner.generate(question_id, start_ordinal, request).await
        }
    }

    #[tokio::test]
    async fn unanimous_question_is_fast_in_round_one() {
        let backend =
            FixtureBackend::from_records(records("q1", &[('A', 2), ('A', 3)])).unwrap();
        let result = run(&[mc_question("q1", "AB")], &backend, &options(2, 2, 10))
            .await
            .unwrap();
        let verdict = &result.verdicts["q1"];
        assert_eq!(
            verdict.status,
            VerdictStatus::Fast { answer: key('A'), round: 1 }
        );
        assert_eq!(verdict.queries_used, 2);
        assert_eq!(result.ledger.total, 2);
    }

    #[tokio::test]
    async fn zero_fast_round_stops_the_loop_and_resolves_at_cap() {
        // Ties in round 1; the loop stops immediately and the top-up takes
        // both pools straight to the cap.
        let q1 = records("q1", &[('A', 3), ('B', 3), ('A', 3), ('B', 3), ('A', 2), ('B', 4)]);
        let q2 = records("q2", &[('B', 2), ('A', 2), ('B', 2), ('B', 3), ('B', 3), ('A', 4)]);
        let backend =
            FixtureBackend::from_records(q1.into_iter().chain(q2)).unwrap();
        let questions = [mc_question("q1", "AB"), mc_question("q2", "AB")];
        let result = run(&questions, &backend, &options(2, 2, 6)).await.unwrap();

        // Every question lands at exactly budget_cap queries.
        for verdict in result.verdicts.values() {
            assert_eq!(verdict.queries_used, 6);
            assert_eq!(verdict.audit.len(), 1, "one classification round only");
        }
        assert_eq!(result.ledger.total, 12);
        assert_eq!(result.ledger.per_round.len(), 2);
        assert_eq!(result.ledger.per_round[0].queries, 4);
        assert_eq!(result.ledger.per_round[1].queries, 8);

        // q1 ends three-three; the tie breaks on A's two-step sample.
        assert_eq!(
            result.verdicts["q1"].status,
            VerdictStatus::Slow { answer: Some(key('A')) }
        );
        // q2 has a plain B plurality.
        assert_eq!(
            result.verdicts["q2"].status,
            VerdictStatus::Slow { answer: Some(key('B')) }
        );
    }

    #[tokio::test]
    async fn pools_accumulate_instead_of_resampling() {
        // q1 goes fast in round 1, q2 in round 2, q3 never; the request
        // plan must fetch only each round's delta.
        let q1 = records("q1", &[('A', 2), ('A', 2)]);
        let q2 = records("q2", &[('A', 3), ('B', 2), ('A', 2), ('A', 3)]);
        let q3 = records("q3", &[('A', 4), ('B', 4), ('A', 5), ('B', 3), ('B', 5), ('A', 3)]);
        let backend = Recording::new(
            FixtureBackend::from_records(q1.into_iter().chain(q2).chain(q3)).unwrap(),
        );
        let questions = [
            mc_question("q1", "AB"),
            mc_question("q2", "AB"),
            mc_question("q3", "AB"),
        ];
        let result = run(&questions, &backend, &options(2, 2, 6)).await.unwrap();

        assert!(result.verdicts["q1"].status.is_fast());
        assert_eq!(
            result.verdicts["q2"].status,
            VerdictStatus::Fast { answer: key('A'), round: 2 }
        );
        assert!(!result.verdicts["q3"].status.is_fast());

        let mut calls = backend.calls.lock().unwrap().clone();
        calls.sort();
        assert_eq!(
            calls,
            vec![
                ("q1".to_string(), 0, 2),
                ("q2".to_string(), 0, 2),
                ("q2".to_string(), 2, 2),
                ("q3".to_string(), 0, 2),
                ("q3".to_string(), 2, 2),
                ("q3".to_string(), 4, 2),
            ]
        );
        // Ordinals within a pool are consecutive and rounds non-decreasing.
        let pool = &result.verdicts["q3"].pool;
        assert_eq!(pool.len(), 6);
        for (i, sample) in pool.iter().enumerate() {
            assert_eq!(sample.ordinal, i as u32);
            sample.validate().unwrap();
        }
        assert!(pool.windows(2).all(|w| w[0].round <= w[1].round));
    }

    #[tokio::test]
    async fn replay_is_deterministic() {
        let q1 = records("q1", &[('A', 2), ('B', 3), ('A', 2), ('A', 4), ('B', 2), ('A', 2)]);
        let make = || FixtureBackend::from_records(q1.clone()).unwrap();
        let questions = [mc_question("q1", "AB")];
        let first = run(&questions, &make(), &options(2, 2, 6)).await.unwrap();
        let second = run(&questions, &make(), &options(2, 2, 6)).await.unwrap();
        assert_eq!(first, second);
    }

    #[tokio::test]
    async fn backend_abort_preserves_partial_ledger_and_drops_verdicts() {
        // q2's fixture covers round 1 only; the round-2 top-up dies.
        let q1 = records("q1", &[('A', 3), ('B', 3), ('A', 3), ('A', 3), ('A', 3), ('A', 3)]);
        let q2 = records("q2", &[('A', 2), ('B', 2)]);
        let backend = FixtureBackend::from_records(q1.into_iter().chain(q2)).unwrap();
        let questions = [mc_question("q1", "AB"), mc_question("q2", "AB")];
        // q1 ties 1-1 in round 1? No: A,B tie. Both tie -> loop stops, top-up to cap.
        let err = run(&questions, &backend, &options(2, 2, 6)).await.unwrap_err();
        match err {
            RunError::BackendAborted { partial_ledger, source } => {
                assert!(matches!(source, BackendError::FixtureMiss { .. }));
                // Round 1 fully recorded (4), plus q1's successful top-up (4).
                assert_eq!(partial_ledger.total, 8);
                assert_eq!(partial_ledger.per_question["q1"], 6);
                assert_eq!(partial_ledger.per_question["q2"], 2);
            }
            other => panic!("expected BackendAborted, got {other}"),
        }
    }

    #[tokio::test]
    async fn spend_to_cap_keeps_growing_after_a_zero_fast_round() {
        // Round 1 ties; round 2 would classify fast, but only the
        // spend-to-cap override ever samples it.
        let samples = [('A', 3), ('B', 3), ('A', 3), ('A', 3)];
        let questions = [mc_question("q1", "AB")];

        let stock = FixtureBackend::from_records(records("q1", &samples)).unwrap();
        let result = run(&questions, &stock, &options(2, 2, 4)).await.unwrap();
        assert_eq!(
            result.verdicts["q1"].status,
            VerdictStatus::Slow { answer: Some(key('A')) }
        );
        assert_eq!(result.verdicts["q1"].audit.len(), 1);

        let eager = FixtureBackend::from_records(records("q1", &samples)).unwrap();
        let mut opts = options(2, 2, 4);
        opts.policy.spend_to_cap = true;
        let result = run(&questions, &eager, &opts).await.unwrap();
        assert_eq!(
            result.verdicts["q1"].status,
            VerdictStatus::Fast { answer: key('A'), round: 2 }
        );
        assert_eq!(result.verdicts["q1"].audit.len(), 2);
    }

    #[tokio::test]
    async fn baseline_costs_exactly_n_per_question() {
        let (questions, profile) = populations::mixed(20, 11);
        let backend = SyntheticBackend::new(profile, &questions).unwrap();
        let result = run_sc_baseline(&questions, &backend, 10, &GenerationSettings::default())
            .await
            .unwrap();
        assert_eq!(result.ledger.total, 200);
        for verdict in result.verdicts.values() {
            assert_eq!(verdict.queries_used, 10);
            assert!(!verdict.status.is_fast());
            verdict.validate().unwrap();
        }
    }

    #[tokio::test]
    async fn dynathink_never_exceeds_baseline_cost() {
        let (questions, profile) = populations::mixed(60, 17);
        let backend = SyntheticBackend::new(profile.clone(), &questions).unwrap();
        let opts = options(2, 2, 10);
        let adaptive = run(&questions, &backend, &opts).await.unwrap();
        let baseline_backend = SyntheticBackend::new(profile, &questions).unwrap();
        let baseline =
            run_sc_baseline(&questions, &baseline_backend, 10, &GenerationSettings::default())
                .await
                .unwrap();
        assert!(adaptive.ledger.total <= baseline.ledger.total);
        let any_fast = adaptive.verdicts.values().any(|v| v.status.is_fast());
        if any_fast {
            assert!(adaptive.ledger.total < baseline.ledger.total);
        }
        // Verdict completeness and invariant checks.
        assert_eq!(adaptive.verdicts.len(), questions.len());
        for verdict in adaptive.verdicts.values() {
            verdict.validate().unwrap();
            assert!(verdict.queries_used <= 10);
        }
        adaptive.ledger.validate().unwrap();
    }

    #[tokio::test]
    async fn input_validation_errors() {
        let backend = FixtureBackend::default();
        let err = run(&[], &backend, &options(2, 2, 10)).await.unwrap_err();
        assert!(matches!(err, RunError::EmptyQuestionSet));

        let questions = [mc_question("q1", "AB"), mc_question("q1", "AB")];
        let err = run(&questions, &backend, &options(2, 2, 10)).await.unwrap_err();
        assert!(matches!(err, RunError::DuplicateQuestionId(_)));

        let mut opts = options(2, 2, 10);
        opts.generation.temperature = 0.0;
        let err = run(&[mc_question("q1", "AB")], &backend, &opts).await.unwrap_err();
        assert!(matches!(err, RunError::InvalidOptions(_)));

        // With a single-sample budget, greedy decoding is legitimate.
        let backend = FixtureBackend::from_records(records("q1", &[('A', 1)])).unwrap();
        let mut opts = options(1, 1, 1);
        opts.generation.temperature = 0.0;
        assert!(run(&[mc_question("q1", "AB")], &backend, &opts).await.is_ok());
    }

    #[tokio::test]
    async fn cap_equal_to_initial_n_is_single_shot() {
        let backend =
            FixtureBackend::from_records(records("q1", &[('A', 2), ('B', 3), ('A', 2), ('A', 2)]))
                .unwrap();
        let result = run(&[mc_question("q1", "AB")], &backend, &options(4, 2, 4))
            .await
            .unwrap();
        let verdict = &result.verdicts["q1"];
        assert_eq!(verdict.audit.len(), 1);
        assert_eq!(verdict.queries_used, 4);
        assert_eq!(result.ledger.per_round.len(), 1);
        assert!(verdict.status.is_fast());
    }
}
