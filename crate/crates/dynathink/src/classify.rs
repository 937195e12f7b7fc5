//! The two verification checks — vote consistency and reasoning-step
//! minimality — and their composition into a per-round fast/slow decision.
//!
//! Everything here is a pure function of the sample pool, so decisions are
//! reproducible from the audit trail alone and safe to evaluate
//! concurrently across questions.

use crate::types::{
    AnswerKey, ParsedSample, PolicyConfig, ThresholdMode, VerificationOrder, VoteDistribution,
};

/// Outcome of one classification round for one question.
#[derive(Debug, Clone, PartialEq)]
pub enum RoundDecision {
    /// Both checks passed; the question leaves the loop with this answer.
    Fast(AnswerKey),
    /// At least one check failed; the question stays pending.
    Pending,
}

impl RoundDecision {
    pub fn is_fast(&self) -> bool {
        matches!(self, RoundDecision::Fast(_))
    }
}

/// A [`RoundDecision`] along with the evidence that produced it, for the
/// verdict audit trail. `None` for a check means it never ran this round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundOutcome {
    pub decision: RoundDecision,
    pub votes: VoteDistribution,
    pub consistency_ok: Option<bool>,
    pub min_steps_ok: Option<bool>,
}

/// Tally the vote distribution of a pool. Unparseable samples count toward
/// `total_samples` only.
pub fn vote(pool: &[ParsedSample]) -> VoteDistribution {
    let mut dist = VoteDistribution {
        total_samples: pool.len() as u32,
        ..VoteDistribution::default()
    };
    for sample in pool {
        if let Some(answer) = &sample.answer {
            *dist.counts.entry(answer.clone()).or_insert(0) += 1;
            dist.total_parsed += 1;
        }
    }
    dist
}

/// The consistency verification: returns the winning answer iff the vote
/// distribution clears `mode`'s threshold at pool size `n`.
pub fn consistency_check(
    dist: &VoteDistribution,
    n: u32,
    mode: ThresholdMode,
) -> Option<AnswerKey> {
    match mode {
        ThresholdMode::Plurality => dist.unique_top().map(|(key, _)| key.clone()),
        ThresholdMode::StrictMajority => dist
            .unique_top()
            .filter(|(_, count)| *count >= n / 2 + 1)
            .map(|(key, _)| key.clone()),
        ThresholdMode::Unanimous => {
            // A single distinct answer covering every sample; any
            // unparseable sample breaks unanimity.
            if dist.counts.len() == 1 && dist.total_parsed == n {
                dist.counts.keys().next().cloned()
            } else {
                None
            }
        }
    }
}

/// The reasoning-complexity verification: true iff `winner`'s minimum step
/// count equals the minimum over all parsed samples in the pool.
pub fn min_steps_check(pool: &[ParsedSample], winner: &AnswerKey) -> bool {
    match (global_min_steps(pool), winner_min_steps(pool, winner)) {
        (Some(global), Some(winners)) => winners == global,
        _ => false,
    }
}

/// Stricter variant: `winner` must be the *only* answer attaining the
/// global minimum step count.
pub fn min_steps_check_unique(pool: &[ParsedSample], winner: &AnswerKey) -> bool {
    let Some(global) = global_min_steps(pool) else {
        return false;
    };
    if winner_min_steps(pool, winner) != Some(global) {
        return false;
    }
    !pool.iter().any(|s| {
        s.step_count == global && s.answer.is_some() && s.answer.as_ref() != Some(winner)
    })
}

fn global_min_steps(pool: &[ParsedSample]) -> Option<u32> {
    pool.iter()
        .filter(|s| s.answer.is_some())
        .map(|s| s.step_count)
        .min()
}

fn winner_min_steps(pool: &[ParsedSample], winner: &AnswerKey) -> Option<u32> {
    pool.iter()
        .filter(|s| s.answer.as_ref() == Some(winner))
        .map(|s| s.step_count)
        .min()
}

/// Classify one question's pool for the round, per the policy's threshold
/// mode and verification order. Wrapper around [`classify_round`] for
/// callers that need only the decision.
pub fn classify(pool: &[ParsedSample], n: u32, policy: &PolicyConfig) -> RoundDecision {
    classify_round(pool, n, policy).decision
}

/// Classify and keep the per-check evidence for the audit trail.
pub fn classify_round(pool: &[ParsedSample], n: u32, policy: &PolicyConfig) -> RoundOutcome {
    let votes = vote(pool);
    match policy.verification_order {
        VerificationOrder::ConsistencyThenSteps => {
            let Some(winner) = consistency_check(&votes, n, policy.threshold_mode) else {
                return RoundOutcome {
                    decision: RoundDecision::Pending,
                    votes,
                    consistency_ok: Some(false),
                    min_steps_ok: None,
                };
            };
            let steps_ok = if policy.strict_min_steps {
                min_steps_check_unique(pool, &winner)
            } else {
                min_steps_check(pool, &winner)
            };
            RoundOutcome {
                decision: if steps_ok {
                    RoundDecision::Fast(winner)
                } else {
                    RoundDecision::Pending
                },
                votes,
                consistency_ok: Some(true),
                min_steps_ok: Some(steps_ok),
            }
        }
        VerificationOrder::StepsThenConsistency => {
            // The samples attaining the global minimum step count must
            // agree on one answer before the vote threshold is consulted.
            let Some(global) = global_min_steps(pool) else {
                return RoundOutcome {
                    decision: RoundDecision::Pending,
                    votes,
                    consistency_ok: None,
                    min_steps_ok: Some(false),
                };
            };
            let mut minimal_answers = pool
                .iter()
                .filter(|s| s.answer.is_some() && s.step_count == global)
                .map(|s| s.answer.as_ref().unwrap());
            let candidate = minimal_answers.next().cloned();
            let unanimous =
                candidate.is_some() && minimal_answers.all(|a| Some(a) == candidate.as_ref());
            let Some(candidate) = candidate.filter(|_| unanimous) else {
                return RoundOutcome {
                    decision: RoundDecision::Pending,
                    votes,
                    consistency_ok: None,
                    min_steps_ok: Some(false),
                };
            };
            let confirmed =
                consistency_check(&votes, n, policy.threshold_mode) == Some(candidate.clone());
            RoundOutcome {
                decision: if confirmed {
                    RoundDecision::Fast(candidate)
                } else {
                    RoundDecision::Pending
                },
                votes,
                consistency_ok: Some(confirmed),
                min_steps_ok: Some(true),
            }
        }
    }
}

/// Plurality answer of a pool with deterministic tie-breaks: smallest
/// minimum step count first, then the answer whose earliest supporting
/// sample has the lowest ordinal. `None` iff no sample parsed.
///
/// This is the resolution rule for slow questions at the budget cap and
/// for the self-consistency baseline.
pub fn plurality_with_tie_breaks(pool: &[ParsedSample]) -> Option<AnswerKey> {
    let votes = vote(pool);
    let max = votes.max_count();
    if max == 0 {
        return None;
    }
    let tied: Vec<&AnswerKey> = votes
        .counts
        .iter()
        .filter(|(_, count)| **count == max)
        .map(|(key, _)| key)
        .collect();
    if tied.len() == 1 {
        return Some(tied[0].clone());
    }
    let min_steps = |key: &AnswerKey| winner_min_steps(pool, key).expect("tied key has samples");
    let earliest = |key: &AnswerKey| {
        pool.iter()
            .filter(|s| s.answer.as_ref() == Some(key))
            .map(|s| s.ordinal)
            .min()
            .expect("tied key has samples")
    };
    tied.into_iter()
        .min_by_key(|key| (min_steps(key), earliest(key)))
        .cloned()
}
