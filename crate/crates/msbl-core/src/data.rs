//! Shared data model: level configuration, contexts, and logged datasets.

use alloc::string::String;
use alloc::vec::Vec;

use crate::policy::Policy;

/// Propensities below this floor are rejected before any division.
pub const PROPENSITY_FLOOR: f64 = 1e-12;

/// Logged propensities must match the logging policy to this tolerance.
pub const PROPENSITY_MATCH_TOL: f64 = 1e-9;

/// Static description of one timescale level.
///
/// `timescale_ratio` is the number of level-`(k-1)` steps that elapse per
/// level-`k` step; it is 1 at the lowest level. Level indices within one
/// experiment are consecutive starting at 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LevelSpec {
    pub level_index: u32,
    pub timescale_ratio: u32,
    pub action_count: usize,
    pub context_dim: usize,
}

impl LevelSpec {
    pub fn new(level_index: u32, timescale_ratio: u32, action_count: usize, context_dim: usize) -> Self {
        assert!(level_index >= 1, "level indices start at 1");
        assert!(action_count >= 1, "need at least one action");
        assert!(timescale_ratio >= 1, "timescale ratio must be >= 1");
        assert!(
            level_index > 1 || timescale_ratio == 1,
            "level 1 has timescale ratio 1"
        );
        Self {
            level_index,
            timescale_ratio,
            action_count,
            context_dim,
        }
    }
}

/// A context observed at some level.
///
/// `group_id` is simulator-internal ground truth (which latent user group the
/// features were drawn from). It is carried for oracle baselines and audits
/// and must never be read by a learned policy.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextSample {
    pub level_index: u32,
    pub features: Vec<f64>,
    pub group_id: Option<u32>,
}

impl ContextSample {
    pub fn new(level_index: u32, features: Vec<f64>) -> Self {
        Self {
            level_index,
            features,
            group_id: None,
        }
    }

    pub fn with_group(level_index: u32, features: Vec<f64>, group_id: u32) -> Self {
        Self {
            level_index,
            features,
            group_id: Some(group_id),
        }
    }
}

/// One logged bandit interaction `(x, a, r, p)`.
///
/// `reward_components` is non-empty only in feedback-modification settings,
/// where the scalar reward is accompanied by a component vector that upper
/// levels reweight.
#[derive(Debug, Clone, PartialEq)]
pub struct LoggedInteraction {
    pub context: ContextSample,
    pub action_index: usize,
    pub reward: f64,
    pub reward_components: Vec<f64>,
    pub propensity: f64,
}

/// A logged dataset collected at one level under one logging policy.
#[derive(Debug, Clone, PartialEq)]
pub struct LoggedDataset {
    pub level_index: u32,
    pub interactions: Vec<LoggedInteraction>,
    pub logging_policy_id: String,
}

impl LoggedDataset {
    pub fn new(level_index: u32, logging_policy_id: impl Into<String>) -> Self {
        Self {
            level_index,
            interactions: Vec::new(),
            logging_policy_id: logging_policy_id.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.interactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interactions.is_empty()
    }
}

/// A single dataset validation finding.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    /// Propensity <= 0 breaks the full-support requirement outright.
    NonPositivePropensity { index: usize, value: f64 },
    /// Propensity > 1 is not a probability.
    PropensityAboveOne { index: usize, value: f64 },
    /// Action index outside `[0, action_count)`.
    ActionOutOfRange { index: usize, action: usize, action_count: usize },
    /// Interaction logged with a different level than the dataset.
    LevelMismatch { index: usize, level: u32 },
    /// Logged propensity disagrees with the logging policy's probability.
    PropensityMismatch { index: usize, logged: f64, policy: f64 },
    /// Reward or a component is not a finite number.
    NonFiniteReward { index: usize },
}

/// Validation report; empty means the dataset is usable for training.
#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    pub checked: usize,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Check a dataset for full-support and consistency violations.
///
/// When the logging policy is supplied, each logged propensity is compared
/// against the policy's probability of the logged action at the logged
/// context. Never mutates the data.
pub fn validate_dataset(
    dataset: &LoggedDataset,
    action_count: usize,
    logging_policy: Option<&dyn Policy>,
) -> ValidationReport {
    let mut report = ValidationReport::default();
    for (i, it) in dataset.interactions.iter().enumerate() {
        report.checked += 1;
        if it.context.level_index != dataset.level_index {
            report.violations.push(Violation::LevelMismatch {
                index: i,
                level: it.context.level_index,
            });
        }
        if !(it.propensity > 0.0) {
            report.violations.push(Violation::NonPositivePropensity {
                index: i,
                value: it.propensity,
            });
        } else if it.propensity > 1.0 {
            report.violations.push(Violation::PropensityAboveOne {
                index: i,
                value: it.propensity,
            });
        }
        if it.action_index >= action_count {
            report.violations.push(Violation::ActionOutOfRange {
                index: i,
                action: it.action_index,
                action_count,
            });
        }
        if !it.reward.is_finite() || it.reward_components.iter().any(|c| !c.is_finite()) {
            report.violations.push(Violation::NonFiniteReward { index: i });
        }
        if let Some(policy) = logging_policy {
            if it.action_index < action_count {
                if let Ok(probs) = policy.action_distribution(&it.context.features) {
                    let p = probs[it.action_index];
                    if (p - it.propensity).abs() > PROPENSITY_MATCH_TOL {
                        report.violations.push(Violation::PropensityMismatch {
                            index: i,
                            logged: it.propensity,
                            policy: p,
                        });
                    }
                }
            }
        }
    }
    report
}
