//! Deterministic replay backend: completions scripted per
//! `(question_id, ordinal)` in a JSON Lines file.
//!
//! Replay is bit-identical across runs and platforms, which is what makes
//! orchestrator traces reproducible enough to diff byte-for-byte.

use std::collections::HashMap;
use std::path::Path;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, GenerationRequest};

/// One scripted completion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureRecord {
    pub question_id: String,
    pub ordinal: u32,
    pub text: String,
}

/// Replays scripted completions; requests beyond the script fail loudly.
#[derive(Debug, Default)]
pub struct FixtureBackend {
    scripts: HashMap<(String, u32), String>,
}

impl FixtureBackend {
    pub fn from_records(
        records: impl IntoIterator<Item = FixtureRecord>,
    ) -> Result<Self, BackendError> {
        let mut scripts = HashMap::new();
        for record in records {
            let key = (record.question_id, record.ordinal);
            if scripts.insert(key.clone(), record.text).is_some() {
                return Err(BackendError::BadFixture(format!(
                    "duplicate entry for question {:?} ordinal {}",
                    key.0, key.1
                )));
            }
        }
        Ok(FixtureBackend { scripts })
    }

    /// Load a JSON Lines fixture file; blank lines are ignored.
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, BackendError> {
        let body = std::fs::read_to_string(path)?;
        let records = body
            .lines()
            .enumerate()
            .filter(|(_, line)| !line.trim().is_empty())
            .map(|(i, line)| {
                serde_json::from_str::<FixtureRecord>(line).map_err(|e| {
                    BackendError::BadFixture(format!("line {}: {e}", i + 1))
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_records(records)
    }

    pub fn len(&self) -> usize {
        self.scripts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scripts.is_empty()
    }
}

#[async_trait]
impl Backend for FixtureBackend {
    async fn generate(
        &self,
        question_id: &str,
        start_ordinal: u32,
        request: &GenerationRequest,
    ) -> Result<Vec<String>, BackendError> {
        request.validate()?;
        (start_ordinal..start_ordinal + request.k)
            .map(|ordinal| {
                self.scripts
                    .get(&(question_id.to_string(), ordinal))
                    .cloned()
                    .ok_or_else(|| BackendError::FixtureMiss {
                        question_id: question_id.to_string(),
                        ordinal,
                    })
            })
            .collect()
    }
}
