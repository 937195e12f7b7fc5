//! Declarative run configuration.
//!
//! A TOML file mirrors the policy/backend/generation knobs in nested
//! sections; every value is optional and individually overridable by the
//! command-line flag of the same name. Resolution errors always name the
//! offending field, because "invalid config" with no pointer is hostile in
//! a sweep-shaped workflow. Paths are resolved relative to the process
//! working directory.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use dynathink::backend::http::HttpBackendConfig;
use dynathink::dataset::FormatHint;
use dynathink::orchestrate::GenerationSettings;
use dynathink::types::{PolicyConfig, ThresholdMode, VerificationOrder};

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default)]
    pub dataset: DatasetSection,
    #[serde(default)]
    pub backend: BackendSection,
    #[serde(default)]
    pub policy: PolicySection,
    #[serde(default)]
    pub generation: GenerationSection,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub sweep: SweepSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub path: Option<PathBuf>,
    /// numeric | multiple-choice | boolean | freeform
    pub format: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendSection {
    /// http | fixture | synthetic
    pub kind: Option<String>,
    pub fixture: Option<PathBuf>,
    pub profile: Option<PathBuf>,
    pub endpoint: Option<String>,
    pub api_key_env: Option<String>,
    pub model_id: Option<String>,
    pub max_attempts: Option<u32>,
    pub requests_per_minute: Option<u32>,
    pub max_in_flight: Option<usize>,
    pub native_multi_sample: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySection {
    pub threshold: Option<String>,
    pub order: Option<String>,
    pub initial_n: Option<u32>,
    pub increment: Option<u32>,
    pub budget_cap: Option<u32>,
    pub strict_min_steps: Option<bool>,
    pub spend_to_cap: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationSection {
    pub temperature: Option<f64>,
    pub max_tokens: Option<u32>,
    pub concurrency: Option<usize>,
    pub prompt_prefix: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    /// Overrides the synthetic profile's seed.
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub budget_caps: Option<Vec<u32>>,
}

impl ConfigFile {
    pub fn from_path(path: &Path) -> Result<Self> {
        let body = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&body).with_context(|| format!("parsing config {}", path.display()))
    }
}

/// Flag-level overrides; every field mirrors a config key.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub dataset: Option<PathBuf>,
    pub format: Option<String>,
    pub backend: Option<String>,
    pub fixture: Option<PathBuf>,
    pub profile: Option<PathBuf>,
    pub threshold: Option<String>,
    pub order: Option<String>,
    pub initial_n: Option<u32>,
    pub increment: Option<u32>,
    pub budget_cap: Option<u32>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub model_id: Option<String>,
    pub temperature: Option<f64>,
    pub budget_caps: Option<Vec<u32>>,
}

/// Which completion source a resolved config selects.
#[derive(Debug, Clone, PartialEq)]
pub enum BackendChoice {
    Http(HttpBackendConfig),
    Fixture { path: PathBuf },
    Synthetic { profile: PathBuf },
}

/// A fully resolved, validated configuration.
#[derive(Debug, Clone)]
pub struct Effective {
    pub dataset_path: PathBuf,
    pub format: FormatHint,
    pub backend: BackendChoice,
    pub policy: PolicyConfig,
    pub generation: GenerationSettings,
    pub seed: Option<u64>,
    pub out: PathBuf,
    pub sweep_caps: Vec<u32>,
}

fn parse_field<T>(field: &str, value: &str) -> Result<T>
where
    T: std::str::FromStr<Err = String>,
{
    value.parse().map_err(|e| anyhow::anyhow!("{field}: {e}"))
}

/// Merge file values and flag overrides into an [`Effective`] config.
pub fn resolve(file: ConfigFile, flags: &Overrides) -> Result<Effective> {
    let dataset_path = flags
        .dataset
        .clone()
        .or(file.dataset.path)
        .context("dataset.path is required (set it in the config or pass --dataset)")?;
    let format: FormatHint = match flags.format.clone().or(file.dataset.format) {
        Some(token) => parse_field("dataset.format", &token)?,
        None => FormatHint::MultipleChoice,
    };

    let defaults = PolicyConfig::default();
    let policy = PolicyConfig {
        threshold_mode: match flags.threshold.clone().or(file.policy.threshold) {
            Some(token) => parse_field::<ThresholdMode>("policy.threshold", &token)?,
            None => defaults.threshold_mode,
        },
        verification_order: match flags.order.clone().or(file.policy.order) {
            Some(token) => parse_field::<VerificationOrder>("policy.order", &token)?,
            None => defaults.verification_order,
        },
        initial_n: flags.initial_n.or(file.policy.initial_n).unwrap_or(defaults.initial_n),
        increment: flags.increment.or(file.policy.increment).unwrap_or(defaults.increment),
        budget_cap: flags.budget_cap.or(file.policy.budget_cap).unwrap_or(defaults.budget_cap),
        strict_min_steps: file.policy.strict_min_steps.unwrap_or(false),
        spend_to_cap: file.policy.spend_to_cap.unwrap_or(false),
        ..defaults
    };
    policy
        .validate()
        .map_err(|e| anyhow::anyhow!("policy: {e}"))?;

    let generation_defaults = GenerationSettings::default();
    let generation = GenerationSettings {
        temperature: flags
            .temperature
            .or(file.generation.temperature)
            .unwrap_or(generation_defaults.temperature),
        max_tokens: file.generation.max_tokens.unwrap_or(generation_defaults.max_tokens),
        model_id: flags
            .model_id
            .clone()
            .or(file.backend.model_id.clone())
            .unwrap_or(generation_defaults.model_id),
        prompt_prefix: file.generation.prompt_prefix.filter(|p| !p.is_empty()),
        concurrency: file.generation.concurrency.unwrap_or(generation_defaults.concurrency),
    };

    let kind = flags
        .backend
        .clone()
        .or(file.backend.kind)
        .unwrap_or_else(|| "synthetic".to_string());
    let backend = match kind.as_str() {
        "fixture" => BackendChoice::Fixture {
            path: flags.fixture.clone().or(file.backend.fixture).context(
                "backend.fixture is required for the fixture backend (or pass --fixture)",
            )?,
        },
        "synthetic" => BackendChoice::Synthetic {
            profile: flags.profile.clone().or(file.backend.profile).context(
                "backend.profile is required for the synthetic backend (or pass --profile)",
            )?,
        },
        "http" => {
            let defaults = HttpBackendConfig::default();
            BackendChoice::Http(HttpBackendConfig {
                endpoint: file.backend.endpoint.unwrap_or(defaults.endpoint),
                api_key_env: file.backend.api_key_env.unwrap_or(defaults.api_key_env),
                max_attempts: file.backend.max_attempts.unwrap_or(defaults.max_attempts),
                max_in_flight: file.backend.max_in_flight.unwrap_or(defaults.max_in_flight),
                requests_per_minute: file
                    .backend
                    .requests_per_minute
                    .unwrap_or(defaults.requests_per_minute),
                native_multi_sample: file
                    .backend
                    .native_multi_sample
                    .unwrap_or(defaults.native_multi_sample),
                ..defaults
            })
        }
        other => bail!("backend.kind: unknown backend {other:?}, expected http | fixture | synthetic"),
    };

    let sweep_caps = flags
        .budget_caps
        .clone()
        .or(file.sweep.budget_caps)
        .unwrap_or_else(|| vec![policy.budget_cap]);
    if sweep_caps.is_empty() {
        bail!("sweep.budget_caps: must list at least one cap");
    }

    Ok(Effective {
        dataset_path,
        format,
        backend,
        policy,
        generation,
        seed: flags.seed.or(file.run.seed),
        out: flags
            .out
            .clone()
            .or(file.run.out)
            .unwrap_or_else(|| PathBuf::from("out")),
        sweep_caps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn file(body: &str) -> ConfigFile {
        toml::from_str(body).unwrap()
    }

    #[test]
    fn flags_override_file_values() {
        let config = file(
            r#"
            [dataset]
            path = "from-file.jsonl"
            format = "numeric"

            [backend]
            kind = "fixture"
            fixture = "file.jsonl"

            [policy]
            threshold = "unanimous"
            budget_cap = 6
            "#,
        );
        let flags = Overrides {
            dataset: Some(PathBuf::from("from-flag.jsonl")),
            threshold: Some("plurality".to_string()),
            budget_cap: Some(8),
            ..Overrides::default()
        };
        let effective = resolve(config, &flags).unwrap();
        assert_eq!(effective.dataset_path, PathBuf::from("from-flag.jsonl"));
        assert_eq!(effective.policy.threshold_mode, ThresholdMode::Plurality);
        assert_eq!(effective.policy.budget_cap, 8);
        assert_eq!(effective.format, FormatHint::Numeric);
        assert_eq!(
            effective.backend,
            BackendChoice::Fixture { path: PathBuf::from("file.jsonl") }
        );
    }

    #[test]
    fn missing_dataset_path_names_the_field() {
        let err = resolve(ConfigFile::default(), &Overrides::default()).unwrap_err();
        assert!(err.to_string().contains("dataset.path"), "{err}");
    }

    #[test]
    fn bad_threshold_token_names_the_field() {
        let config = file(
            r#"
            [dataset]
            path = "d.jsonl"

            [policy]
            threshold = "most-votes"
            "#,
        );
        let flags = Overrides {
            profile: Some(PathBuf::from("p.json")),
            ..Overrides::default()
        };
        let err = resolve(config, &flags).unwrap_err();
        assert!(err.to_string().contains("policy.threshold"), "{err}");
    }

    #[test]
    fn backend_specific_paths_are_required() {
        let config = file(
            r#"
            [dataset]
            path = "d.jsonl"

            [backend]
            kind = "fixture"
            "#,
        );
        let err = resolve(config, &Overrides::default()).unwrap_err();
        assert!(err.to_string().contains("backend.fixture"), "{err}");

        let config = file(
            r#"
            [dataset]
            path = "d.jsonl"

            [backend]
            kind = "synthetic"
            "#,
        );
        let err = resolve(config, &Overrides::default()).unwrap_err();
        assert!(err.to_string().contains("backend.profile"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = toml::from_str::<ConfigFile>(
            r#"
            [policy]
            thresold = "plurality"
            "#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("thresold"), "{err}");
    }

    #[test]
    fn invalid_policy_is_rejected_with_field_prefix() {
        let config = file(
            r#"
            [dataset]
            path = "d.jsonl"

            [policy]
            initial_n = 5
            budget_cap = 3
            "#,
        );
        let flags = Overrides {
            profile: Some(PathBuf::from("p.json")),
            ..Overrides::default()
        };
        let err = resolve(config, &flags).unwrap_err();
        assert!(err.to_string().starts_with("policy:"), "{err}");
    }

    #[test]
    fn defaults_fill_everything_else() {
        let config = file(
            r#"
            [dataset]
            path = "d.jsonl"

            [backend]
            kind = "synthetic"
            profile = "p.json"
            "#,
        );
        let effective = resolve(config, &Overrides::default()).unwrap();
        assert_eq!(effective.policy, PolicyConfig::default());
        assert_eq!(effective.out, PathBuf::from("out"));
        assert_eq!(effective.sweep_caps, vec![10]);
        assert_eq!(effective.format, FormatHint::MultipleChoice);
        assert_eq!(effective.seed, None);
    }
}
