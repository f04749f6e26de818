//! Scenario configuration files.
//!
//! A scenario is a JSON document:
//!
//! ```json
//! {
//!   "name": "anti-phase",
//!   "method": "method2",
//!   "centers": [{"cpu": 20, "bw": 20}, {"cpu": 20, "bw": 20}],
//!   "users": [
//!     {"pattern": "{C=4, N=1; C=1, N=4}", "mean_interarrival": 0.4, "hold": 6}
//!   ],
//!   "block_length": 30,
//!   "max_completion": 12,
//!   "seed": 1,
//!   "horizon": 100000,
//!   "warmup_fraction": 0.1
//! }
//! ```
//!
//! `jitter` on a user is `"deterministic"` (default) or
//! `{"gaussian": {"sigma_ratio": 0.1}}`.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::policy::{Method, NormalizationBasis};
use crate::resource::{ResourceVector, Time};
use crate::workload::{derive_weights, Jitter, UserWorkload};

pub const DEFAULT_HORIZON: u64 = 100_000;
pub const DEFAULT_WARMUP_FRACTION: f64 = 0.1;
/// Block length used when none is configured, as a multiple of the longest hold.
pub const DEFAULT_BLOCK_HOLDS: f64 = 5.0;
/// Completion deadline used when none is configured, as a multiple of the longest hold.
pub const DEFAULT_COMPLETION_HOLDS: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub method: Method,
    #[serde(default)]
    pub centers: Vec<ResourceVector>,
    #[serde(default)]
    pub users: Vec<UserWorkload>,
    /// Time block length L.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub block_length: Option<Time>,
    /// Maximum permissible completion time T for delayed requests.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_completion: Option<Time>,
    #[serde(default)]
    pub seed: u64,
    /// Number of arrivals to simulate, across all users.
    #[serde(default = "default_horizon")]
    pub horizon: u64,
    /// Optional cut-off on arrival times.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end_time: Option<Time>,
    #[serde(default = "default_warmup")]
    pub warmup_fraction: f64,
}

fn default_name() -> String {
    "scenario".to_owned()
}

fn default_horizon() -> u64 {
    DEFAULT_HORIZON
}

fn default_warmup() -> f64 {
    DEFAULT_WARMUP_FRACTION
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationIssue {
    pub field: String,
    pub message: String,
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse {origin}: {message} (line {line}, column {column})")]
    Parse {
        origin: String,
        message: String,
        line: usize,
        column: usize,
    },
    #[error("invalid configuration:\n  {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("\n  "))]
    Invalid(Vec<ValidationIssue>),
}

impl ConfigError {
    pub fn issues(&self) -> &[ValidationIssue] {
        match self {
            ConfigError::Invalid(issues) => issues,
            _ => &[],
        }
    }
}

/// Parameters the engine needs, after defaults are applied.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedScenario {
    pub block_length: Time,
    pub max_completion: Time,
    pub basis: NormalizationBasis,
    pub weights: Vec<f64>,
}

impl ScenarioConfig {
    pub fn from_json(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let config: Self = serde_json::from_str(text).map_err(|e| ConfigError::Parse {
            origin: origin.to_owned(),
            message: e.to_string(),
            line: e.line(),
            column: e.column(),
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn max_hold(&self) -> Time {
        self.users.iter().map(|u| u.hold).fold(0.0, f64::max)
    }

    pub fn total_capacity(&self) -> ResourceVector {
        self.centers.iter().copied().sum()
    }

    pub fn effective_block_length(&self) -> Time {
        self.block_length
            .unwrap_or(DEFAULT_BLOCK_HOLDS * self.max_hold())
    }

    pub fn effective_max_completion(&self) -> Time {
        self.max_completion
            .unwrap_or(DEFAULT_COMPLETION_HOLDS * self.max_hold())
    }

    /// Checks every constraint and reports all violations at once.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut issues = Vec::new();
        let mut issue =
            |field: String, message: String| issues.push(ValidationIssue { field, message });

        if self.centers.is_empty() {
            issue("centers".into(), "at least one center is required".into());
        }
        for (i, c) in self.centers.iter().enumerate() {
            for (name, v) in [("cpu", c.cpu), ("bw", c.bw)] {
                if !(v.is_finite() && v >= 0.0) {
                    issue(
                        format!("centers[{i}].{name}"),
                        format!("capacity must be finite and >= 0, got {v}"),
                    );
                }
            }
        }
        let total = self.total_capacity();
        if !self.centers.is_empty() && !(total.cpu > 0.0 && total.bw > 0.0) {
            issue(
                "centers".into(),
                "total capacity of each resource type must be positive".into(),
            );
        }

        if self.users.is_empty() {
            issue("users".into(), "at least one user is required".into());
        }
        let block_length = self.effective_block_length();
        let max_completion = self.effective_max_completion();
        for (g, u) in self.users.iter().enumerate() {
            if !(u.mean_interarrival.is_finite() && u.mean_interarrival > 0.0) {
                issue(
                    format!("users[{g}].mean_interarrival"),
                    format!("must be finite and > 0, got {}", u.mean_interarrival),
                );
            }
            if !(u.hold.is_finite() && u.hold > 0.0) {
                issue(
                    format!("users[{g}].hold"),
                    format!("must be finite and > 0, got {}", u.hold),
                );
            }
            if let Jitter::Gaussian { sigma_ratio } = u.jitter {
                if !(sigma_ratio.is_finite() && sigma_ratio >= 0.0) {
                    issue(
                        format!("users[{g}].jitter.gaussian.sigma_ratio"),
                        format!("must be finite and >= 0, got {sigma_ratio}"),
                    );
                }
            }
            if self.method == Method::Method3 && !(block_length > u.hold) {
                issue(
                    "block_length".into(),
                    format!(
                        "must be longer than the holding time of users[{g}] ({block_length} <= {})",
                        u.hold
                    ),
                );
            }
            if !(max_completion >= u.hold) {
                issue(
                    "max_completion".into(),
                    format!(
                        "must be at least the holding time of users[{g}] ({max_completion} < {})",
                        u.hold
                    ),
                );
            }
        }
        if let Some(l) = self.block_length {
            if !(l.is_finite() && l > 0.0) {
                issue(
                    "block_length".into(),
                    format!("must be finite and > 0, got {l}"),
                );
            }
        }
        if let Some(t) = self.end_time {
            if !(t.is_finite() && t > 0.0) {
                issue(
                    "end_time".into(),
                    format!("must be finite and > 0, got {t}"),
                );
            }
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            issue(
                "warmup_fraction".into(),
                format!("must lie in [0, 1), got {}", self.warmup_fraction),
            );
        }

        if issues.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(issues))
        }
    }

    /// Validates and applies defaults.
    pub fn resolve(&self) -> Result<ResolvedScenario, ConfigError> {
        self.validate()?;
        let block_length = self.effective_block_length();
        let invalid = |field: &str, message: String| {
            ConfigError::Invalid(vec![ValidationIssue {
                field: field.into(),
                message,
            }])
        };
        let basis = NormalizationBasis::from_capacities(self.centers.iter().copied())
            .ok_or_else(|| invalid("centers", "no center has positive capacity".into()))?;
        let weights = derive_weights(&self.users, block_length, self.total_capacity())
            .map_err(|e| invalid("users", e.to_string()))?;
        Ok(ResolvedScenario {
            block_length,
            max_completion: self.effective_max_completion(),
            basis,
            weights,
        })
    }
}

pub fn load_config(path: impl AsRef<Path>) -> Result<ScenarioConfig, ConfigError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_owned(),
        source,
    })?;
    ScenarioConfig::from_json(&text, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::PatternSpec;

    const ANTI_PHASE: &str = r#"{
        "name": "anti-phase",
        "method": "method2",
        "centers": [{"cpu": 20, "bw": 20}, {"cpu": 20, "bw": 20}],
        "users": [{"pattern": "{C=3, N=1; C=1, N=3}", "mean_interarrival": 0.5, "hold": 6}]
    }"#;

    #[test]
    fn loads_anti_phase_scenario() {
        let config = ScenarioConfig::from_json(ANTI_PHASE, "inline").unwrap();
        assert_eq!(config.centers, vec![ResourceVector::new(20.0, 20.0); 2]);
        assert_eq!(config.users[0].hold, 6.0);
        assert_eq!(
            config.users[0].pattern,
            PatternSpec::anti_phase(3.0).unwrap()
        );
        assert_eq!(config.horizon, DEFAULT_HORIZON);
        assert_eq!(config.warmup_fraction, DEFAULT_WARMUP_FRACTION);
        let resolved = config.resolve().unwrap();
        assert_eq!(resolved.block_length, 30.0);
        assert_eq!(resolved.max_completion, 12.0);
        assert_eq!(resolved.weights, vec![1.0]);
    }

    #[test]
    fn method3_needs_block_longer_than_hold() {
        let text = ANTI_PHASE
            .replace("method2", "method3")
            .replace("\"users\"", "\"block_length\": 6, \"users\"");
        let err = ScenarioConfig::from_json(&text, "inline").unwrap_err();
        assert_eq!(err.issues().len(), 1);
        assert_eq!(err.issues()[0].field, "block_length");

        // the same block length is fine for method2
        let text = ANTI_PHASE.replace("\"users\"", "\"block_length\": 6, \"users\"");
        ScenarioConfig::from_json(&text, "inline").unwrap();
    }

    #[test]
    fn missing_centers_is_a_validation_error() {
        let text = r#"{"method": "method1", "users": [{"pattern": "{C=1,N=1}", "mean_interarrival": 1, "hold": 1}]}"#;
        let err = ScenarioConfig::from_json(text, "inline").unwrap_err();
        assert_eq!(err.issues()[0].field, "centers");
    }

    #[test]
    fn reports_every_issue_with_paths() {
        let text = r#"{
            "method": "method1",
            "centers": [{"cpu": -1, "bw": 20}],
            "users": [{"pattern": "{C=1,N=1}", "mean_interarrival": 0, "hold": -2,
                       "jitter": {"gaussian": {"sigma_ratio": -0.5}}}],
            "warmup_fraction": 1.5
        }"#;
        let err = ScenarioConfig::from_json(text, "inline").unwrap_err();
        let fields: Vec<_> = err.issues().iter().map(|i| i.field.as_str()).collect();
        for want in [
            "centers[0].cpu",
            "centers",
            "users[0].mean_interarrival",
            "users[0].hold",
            "users[0].jitter.gaussian.sigma_ratio",
            "warmup_fraction",
        ] {
            assert!(fields.contains(&want), "missing {want} in {fields:?}");
        }
    }

    #[test]
    fn bad_pattern_is_a_parse_error() {
        let text = ANTI_PHASE.replace("{C=3, N=1; C=1, N=3}", "{C=0, N=1}");
        let err = ScenarioConfig::from_json(&text, "inline").unwrap_err();
        assert!(matches!(err, ConfigError::Parse { .. }), "{err}");
        assert!(err.to_string().contains("non-positive"));
    }

    #[test]
    fn gaussian_sigma_defaults() {
        let text = ANTI_PHASE.replace("\"hold\": 6", "\"hold\": 6, \"jitter\": {\"gaussian\": {}}");
        let config = ScenarioConfig::from_json(&text, "inline").unwrap();
        assert_eq!(
            config.users[0].jitter,
            Jitter::Gaussian { sigma_ratio: 0.1 }
        );
    }

    #[test]
    fn zero_capacity_center_is_allowed() {
        let text = ANTI_PHASE.replace(
            r#"[{"cpu": 20, "bw": 20}, {"cpu": 20, "bw": 20}]"#,
            r#"[{"cpu": 40, "bw": 40}, {"cpu": 0, "bw": 0}]"#,
        );
        let config = ScenarioConfig::from_json(&text, "inline").unwrap();
        assert_eq!(
            config.resolve().unwrap().basis,
            NormalizationBasis::new(40.0, 40.0)
        );
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let text = ANTI_PHASE.replace("\"name\"", "\"nmae\": 1, \"name\"");
        assert!(matches!(
            ScenarioConfig::from_json(&text, "inline"),
            Err(ConfigError::Parse { .. })
        ));
    }
}
