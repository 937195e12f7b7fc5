//! Pluggable completion backends.
//!
//! Three implementations share one async trait: a live HTTP client speaking
//! the common chat-completion JSON convention, a fixture backend replaying
//! scripted completions byte-for-byte, and a synthetic backend sampling
//! step-structured transcripts from per-question answer distributions.
//!
//! The offline backends address completions by `(question_id, ordinal)`,
//! where the ordinal is the sample's position in the question's accumulated
//! pool. That makes replay and synthetic generation independent of request
//! batching and concurrency.

pub mod fixture;
pub mod http;
pub mod synthetic;

use async_trait::async_trait;
use thiserror::Error;

use crate::types::Question;

/// The instruction line prepended to every problem so completions arrive
/// step-marked.
pub const STEP_INSTRUCTION: &str =
    "Solve the following problem step by step. Please start each step with \"Step :\"";

/// Default environment variable consulted for the live backend's bearer
/// token.
pub const DEFAULT_API_KEY_ENV: &str = "DYNATHINK_API_KEY";

/// Parameters for one generation call.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRequest {
    pub prompt: String,
    /// Completions requested.
    pub k: u32,
    pub temperature: f64,
    pub max_tokens: u32,
    pub model_id: String,
}

impl GenerationRequest {
    pub fn validate(&self) -> Result<(), BackendError> {
        if self.k < 1 {
            return Err(BackendError::InvalidRequest("k must be >= 1".to_string()));
        }
        if self.k > 1 && self.temperature <= 0.0 {
            return Err(BackendError::InvalidRequest(
                "temperature must be > 0 when requesting multiple samples; \
                 greedy decoding would return k identical completions"
                    .to_string(),
            ));
        }
        Ok(())
    }
}

/// Errors surfaced by any backend. Retry handling happens inside the HTTP
/// backend; callers see only the post-retry outcome.
#[derive(Debug, Error)]
pub enum BackendError {
    #[error("invalid generation request: {0}")]
    InvalidRequest(String),
    #[error("fixture error: {0}")]
    BadFixture(String),
    #[error("fixture has no completion for question {question_id:?} ordinal {ordinal}")]
    FixtureMiss { question_id: String, ordinal: u32 },
    #[error("synthetic profile error: {0}")]
    BadProfile(String),
    #[error("no synthetic profile for question {0:?}")]
    ProfileMiss(String),
    #[error("completions endpoint returned status {status}: {detail}")]
    BadStatus { status: u16, detail: String },
    #[error("malformed completions response: {0}")]
    BadResponse(String),
    #[error("request failed after {attempts} attempts, last error: {last}")]
    Exhausted { attempts: u32, last: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// A completion generator.
///
/// Implementations must return exactly `request.k` texts or an error —
/// never a partial result. `start_ordinal` is the pool position the first
/// returned completion will occupy; offline backends use it (plus
/// `question_id`) to address their scripts deterministically, the live
/// backend ignores both.
#[async_trait]
pub trait Backend: Send + Sync {
    async fn generate(
        &self,
        question_id: &str,
        start_ordinal: u32,
        request: &GenerationRequest,
    ) -> Result<Vec<String>, BackendError>;
}

/// Assemble the prompt for a question: optional few-shot prefix, then the
/// step instruction, then the problem text, blank-line separated.
/// Byte-stable for fixed inputs.
pub fn build_prompt(question: &Question, prefix: Option<&str>) -> String {
    match prefix {
        Some(prefix) => format!("{prefix}\n\n{STEP_INSTRUCTION}\n\n{}", question.prompt),
        None => format!("{STEP_INSTRUCTION}\n\n{}", question.prompt),
    }
}
