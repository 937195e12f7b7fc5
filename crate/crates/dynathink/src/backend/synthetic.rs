//! Stochastic-but-reproducible completion generator.
//!
//! Each question carries a profile: a distribution over final answers, a
//! per-answer distribution over step counts, and a parse-failure rate. A
//! draw for `(question_id, ordinal)` seeds its own ChaCha8 stream from the
//! profile seed and those coordinates, so results are independent of
//! request batching, concurrency, and platform. Completions are rendered
//! as genuine step-marked transcripts: the orchestrator exercises the real
//! parsing pipeline, and extracting a rendered transcript recovers exactly
//! the sampled (answer, step count) pair.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use async_trait::async_trait;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, GenerationRequest};
use crate::extract::canonicalize_gold;
use crate::types::{AnswerFormat, AnswerKey, Question};

/// Sampling profile for one question. Answers are canonical strings under
/// the owning question's format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticQuestionProfile {
    /// (canonical answer, probability); probabilities sum to 1.
    pub answer_pool: Vec<(String, f64)>,
    /// Per-answer distribution over step counts, support within [1, 64].
    pub steps_given_answer: BTreeMap<String, Vec<(u32, f64)>>,
    /// Probability that a draw yields an unparseable completion.
    #[serde(default)]
    pub parse_failure_rate: f64,
}

const PROBABILITY_SLACK: f64 = 1e-9;

impl SyntheticQuestionProfile {
    pub fn validate(&self) -> Result<(), BackendError> {
        let bad = |msg: String| Err(BackendError::BadProfile(msg));
        if self.answer_pool.is_empty() {
            return bad("answer_pool must be non-empty".to_string());
        }
        let sum: f64 = self.answer_pool.iter().map(|(_, p)| p).sum();
        if (sum - 1.0).abs() > PROBABILITY_SLACK
            || self.answer_pool.iter().any(|(_, p)| *p < 0.0)
        {
            return bad(format!("answer_pool probabilities sum to {sum}, want 1"));
        }
        for (answer, _) in &self.answer_pool {
            let Some(steps) = self.steps_given_answer.get(answer) else {
                return bad(format!("no step distribution for answer {answer:?}"));
            };
            let sum: f64 = steps.iter().map(|(_, p)| p).sum();
            if (sum - 1.0).abs() > PROBABILITY_SLACK || steps.iter().any(|(_, p)| *p < 0.0) {
                return bad(format!(
                    "step probabilities for {answer:?} sum to {sum}, want 1"
                ));
            }
            if steps.iter().any(|(s, _)| *s < 1 || *s > 64) {
                return bad(format!("step support for {answer:?} outside [1, 64]"));
            }
        }
        for answer in self.steps_given_answer.keys() {
            if !self.answer_pool.iter().any(|(a, _)| a == answer) {
                return bad(format!(
                    "steps_given_answer names {answer:?}, absent from answer_pool"
                ));
            }
        }
        if !(0.0..1.0).contains(&self.parse_failure_rate) {
            return bad(format!(
                "parse_failure_rate {} outside [0, 1)",
                self.parse_failure_rate
            ));
        }
        Ok(())
    }
}

/// On-disk profile document: a seed plus per-question profiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticProfileFile {
    pub seed: u64,
    pub questions: BTreeMap<String, SyntheticQuestionProfile>,
}

impl SyntheticProfileFile {
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, BackendError> {
        let body = std::fs::read_to_string(path)?;
        let file: SyntheticProfileFile = serde_json::from_str(&body)?;
        file.validate()?;
        Ok(file)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), BackendError> {
        let mut body = serde_json::to_string_pretty(self)?;
        body.push('\n');
        std::fs::write(path, body)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        for (id, profile) in &self.questions {
            profile
                .validate()
                .map_err(|e| BackendError::BadProfile(format!("question {id:?}: {e}")))?;
        }
        Ok(())
    }
}

/// The (answer, step count) pair a synthetic transcript encodes.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticOutcome {
    pub answer: Option<AnswerKey>,
    pub step_count: u32,
}

struct Compiled {
    format: AnswerFormat,
    profile: SyntheticQuestionProfile,
}

/// Deterministic sampling backend over [`SyntheticProfileFile`] profiles.
pub struct SyntheticBackend {
    seed: u64,
    questions: HashMap<String, Compiled>,
}

impl SyntheticBackend {
    /// Pair profiles with questions. Every question must have a profile,
    /// and every profile answer must already be canonical under the
    /// question's format — otherwise votes would never match gold keys.
    pub fn new(file: SyntheticProfileFile, questions: &[Question]) -> Result<Self, BackendError> {
        file.validate()?;
        let mut compiled = HashMap::new();
        for question in questions {
            let Some(profile) = file.questions.get(&question.id) else {
                return Err(BackendError::ProfileMiss(question.id.clone()));
            };
            for (answer, _) in &profile.answer_pool {
                let canonical = canonicalize_gold(answer, &question.answer_format)
                    .map(|key| key.canonical);
                if canonical.as_deref() != Some(answer.as_str()) {
                    return Err(BackendError::BadProfile(format!(
                        "question {:?}: answer {answer:?} is not canonical under {:?}",
                        question.id, question.answer_format
                    )));
                }
            }
            compiled.insert(
                question.id.clone(),
                Compiled {
                    format: question.answer_format.clone(),
                    profile: profile.clone(),
                },
            );
        }
        Ok(SyntheticBackend {
            seed: file.seed,
            questions: compiled,
        })
    }

    /// Replace the profile file's seed (e.g. from a --seed flag).
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// The deterministic outcome encoded by the transcript at
    /// `(question_id, ordinal)`. Exposed so tests can assert the
    /// parse-side recovery matches the sampled pair exactly.
    pub fn expected_outcome(
        &self,
        question_id: &str,
        ordinal: u32,
    ) -> Result<SyntheticOutcome, BackendError> {
        let compiled = self
            .questions
            .get(question_id)
            .ok_or_else(|| BackendError::ProfileMiss(question_id.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(draw_seed(self.seed, question_id, ordinal));
        let profile = &compiled.profile;
        if rng.random::<f64>() < profile.parse_failure_rate {
            return Ok(SyntheticOutcome {
                answer: None,
                step_count: 0,
            });
        }
        let answer = pick_weighted(&profile.answer_pool, rng.random::<f64>());
        let steps = &profile.steps_given_answer[answer];
        let step_count = *pick_weighted(steps, rng.random::<f64>());
        Ok(SyntheticOutcome {
            answer: Some(AnswerKey::new(answer.clone(), compiled.format.clone())),
            step_count,
        })
    }

    fn render(&self, question_id: &str, ordinal: u32) -> Result<String, BackendError> {
        let outcome = self.expected_outcome(question_id, ordinal)?;
        let format = &self.questions[question_id].format;
        Ok(render_transcript(&outcome, format))
    }
}

#[async_trait]
impl Backend for SyntheticBackend {
    async fn generate(
        &self,
        question_id: &str,
        start_ordinal: u32,
        request: &GenerationRequest,
    ) -> Result<Vec<String>, BackendError> {
        request.validate()?;
        (start_ordinal..start_ordinal + request.k)
            .map(|ordinal| self.render(question_id, ordinal))
            .collect()
    }
}

/// FNV-1a over (seed, question id, ordinal). Hand-rolled because the
/// stream must be stable across platforms and releases; std's default
/// hasher guarantees neither.
fn draw_seed(seed: u64, question_id: &str, ordinal: u32) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let bytes = seed
        .to_le_bytes()
        .into_iter()
        .chain(question_id.bytes())
        .chain([0xff])
        .chain(ordinal.to_le_bytes());
    let mut hash = OFFSET;
    for byte in bytes {
        hash ^= u64::from(byte);
        hash = hash.wrapping_mul(PRIME);
    }
    hash
}

/// Inverse-CDF lookup. A cumulative scan (rather than alias tables or
/// library samplers) keeps the draw a pure function of `u` with a stable
/// summation order.
fn pick_weighted<T>(items: &[(T, f64)], u: f64) -> &T {
    let mut cumulative = 0.0;
    for (item, weight) in items {
        cumulative += weight;
        if u < cumulative {
            return item;
        }
    }
    // Float dust can leave the final cumulative a hair under 1.
    &items.last().expect("validated non-empty").0
}

const FILLER: [&str; 5] = [
    "Restate the quantities given in the problem.",
    "Relate the unknowns using the stated conditions.",
    "Apply the relation to reduce the remaining unknowns.",
    "Simplify the resulting expression.",
    "Check the intermediate result against the constraints.",
];

const FAILURE_TEXT: &str =
    "These attempts contradict each other, and the confusion does not resolve into anything usable.";

/// Render an outcome as a step-marked transcript. Unparseable outcomes
/// render as marker-free prose (zero steps, no extractable answer).
fn render_transcript(outcome: &SyntheticOutcome, format: &AnswerFormat) -> String {
    let Some(answer) = &outcome.answer else {
        return FAILURE_TEXT.to_string();
    };
    let rendered = match format {
        AnswerFormat::Numeric | AnswerFormat::Boolean => answer.canonical.clone(),
        AnswerFormat::MultipleChoice { .. } => format!("({})", answer.canonical),
        AnswerFormat::FreeformBoxed => format!("\\boxed{{{}}}", answer.canonical),
    };
    let mut lines = Vec::with_capacity(outcome.step_count as usize);
    for i in 1..outcome.step_count {
        lines.push(format!("Step {i}: {}", FILLER[(i as usize - 1) % FILLER.len()]));
    }
    lines.push(format!(
        "Step {}: The answer is {rendered}.",
        outcome.step_count
    ));
    lines.join("\n")
}

/// Ready-made question populations for experiments and tests. Each builder
/// returns matching (questions, profile file) pairs; the profile file's
/// seed is the `seed` argument.
pub mod populations {
    use super::*;

    fn make_question(id: String, prompt: String, format: AnswerFormat, gold: &str) -> Question {
        Question {
            gold: Some(AnswerKey::new(gold, format.clone())),
            id,
            prompt,
            answer_format: format,
        }
    }

    fn profile(
        answers: &[(&str, f64)],
        steps: &[(&str, &[(u32, f64)])],
        parse_failure_rate: f64,
    ) -> SyntheticQuestionProfile {
        SyntheticQuestionProfile {
            answer_pool: answers
                .iter()
                .map(|(a, p)| (a.to_string(), *p))
                .collect(),
            steps_given_answer: steps
                .iter()
                .map(|(a, d)| (a.to_string(), d.to_vec()))
                .collect(),
            parse_failure_rate,
        }
    }

    /// Easy/medium/hard mix across multiple-choice and numeric formats;
    /// the general-purpose population for cost and accuracy comparisons.
    pub fn mixed(count: usize, seed: u64) -> (Vec<Question>, SyntheticProfileFile) {
        let mut questions = Vec::with_capacity(count);
        let mut profiles = BTreeMap::new();
        for i in 0..count {
            let id = format!("q{i:04}");
            let (format, answers): (AnswerFormat, Vec<String>) = if i % 2 == 0 {
                let letters = ['A', 'B', 'C', 'D'];
                let gold = letters[(i / 2) % 4];
                let mut order = vec![gold.to_string()];
                order.extend(letters.iter().filter(|l| **l != gold).map(char::to_string));
                (AnswerFormat::multiple_choice("ABCD"), order)
            } else {
                let base = (i * 7) % 90 + 3;
                (
                    AnswerFormat::Numeric,
                    vec![base.to_string(), (base + 1).to_string(), (base + 2).to_string()],
                )
            };
            let tier = i % 20;
            let (probs, gold_steps, rival_steps, failure): (
                &[f64],
                &[(u32, f64)],
                &[(u32, f64)],
                f64,
            ) = if tier < 7 {
                (&[0.97, 0.03], &[(2, 1.0)], &[(2, 1.0)], 0.0)
            } else if tier < 15 {
                (&[0.75, 0.20, 0.05], &[(2, 0.6), (3, 0.4)], &[(3, 0.5), (4, 0.5)], 0.02)
            } else {
                (
                    &[0.45, 0.35, 0.20],
                    &[(3, 0.4), (4, 0.4), (5, 0.2)],
                    &[(4, 0.6), (5, 0.4)],
                    0.05,
                )
            };
            let pool: Vec<(String, f64)> = answers
                .iter()
                .zip(probs)
                .map(|(a, p)| (a.clone(), *p))
                .collect();
            let steps: BTreeMap<String, Vec<(u32, f64)>> = pool
                .iter()
                .enumerate()
                .map(|(j, (a, _))| {
                    let d = if j == 0 { gold_steps } else { rival_steps };
                    (a.clone(), d.to_vec())
                })
                .collect();
            profiles.insert(
                id.clone(),
                SyntheticQuestionProfile {
                    answer_pool: pool,
                    steps_given_answer: steps,
                    parse_failure_rate: failure,
                },
            );
            questions.push(make_question(
                id,
                format!("Synthetic reasoning item {i}."),
                format,
                &answers[0],
            ));
        }
        (questions, SyntheticProfileFile { seed, questions: profiles })
    }

    /// Correctness rises with the gold answer's vote share. Two tiers:
    /// 70% of items answer unanimously and correctly (vote share 1.0);
    /// the rest are symmetric coin flips between the gold answer and one
    /// rival (vote share 0.5, occasional parse failures), so agreement on
    /// them carries no real evidence and any majority reached later is
    /// right exactly half the time. Step counts are identical everywhere,
    /// leaving the vote threshold as the only discriminating check.
    pub fn vote_share_graded(count: usize, seed: u64) -> (Vec<Question>, SyntheticProfileFile) {
        let mut questions = Vec::with_capacity(count);
        let mut profiles = BTreeMap::new();
        let letters = ['A', 'B', 'C'];
        let all_steps: &[(u32, f64)] = &[(3, 1.0)];
        for i in 0..count {
            let id = format!("q{i:04}");
            let gold = letters[i % 3].to_string();
            let rival = letters[(i + 1) % 3].to_string();
            let p = if i % 10 < 7 {
                profiles.insert(
                    id.clone(),
                    profile(&[(&gold, 1.0)], &[(&gold, all_steps)], 0.0),
                );
                1.0
            } else {
                profiles.insert(
                    id.clone(),
                    profile(
                        &[(&gold, 0.5), (&rival, 0.5)],
                        &[(&gold, all_steps), (&rival, all_steps)],
                        0.2,
                    ),
                );
                0.5
            };
            questions.push(make_question(
                id,
                format!("Vote-share item {i} (top share {p})."),
                AnswerFormat::multiple_choice("ABC"),
                &gold,
            ));
        }
        (questions, SyntheticProfileFile { seed, questions: profiles })
    }

    /// Correctness falls as the (degenerate) step count rises: items at
    /// 2/3/4/5 steps are answered correctly with probability
    /// 1.0/0.95/0.55/0.08. Both answers of an item share its step count,
    /// so accuracy buckets cleanly by steps.
    pub fn step_graded(count: usize, seed: u64) -> (Vec<Question>, SyntheticProfileFile) {
        let mut questions = Vec::with_capacity(count);
        let mut profiles = BTreeMap::new();
        const P_CORRECT: [f64; 4] = [1.0, 0.95, 0.55, 0.08];
        for i in 0..count {
            let id = format!("q{i:04}");
            let steps = 2 + (i % 4) as u32;
            let p = P_CORRECT[i % 4];
            let (gold, rival) = if i % 2 == 0 { ("A", "B") } else { ("B", "A") };
            let step_dist: &[(u32, f64)] = &[(steps, 1.0)];
            let prof = if p >= 1.0 {
                profile(&[(gold, 1.0)], &[(gold, step_dist)], 0.0)
            } else {
                profile(
                    &[(gold, p), (rival, 1.0 - p)],
                    &[(gold, step_dist), (rival, step_dist)],
                    0.0,
                )
            };
            profiles.insert(id.clone(), prof);
            questions.push(make_question(
                id,
                format!("Step-graded item {i} ({steps} steps)."),
                AnswerFormat::multiple_choice("AB"),
                gold,
            ));
        }
        (questions, SyntheticProfileFile { seed, questions: profiles })
    }
}
