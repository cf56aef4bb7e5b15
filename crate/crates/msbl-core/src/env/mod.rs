//! Multi-level reward simulators.
//!
//! An environment owns its context distributions, reward formulas, and the
//! execution of one upper-level step (which internally runs the configured
//! number of lower-level steps). Policies are passed in from outside: the
//! level-1 behavior is either a learned policy family indexed by level-2
//! macro actions or an env-builtin scorer (e.g. top-k of boosted relevance),
//! and intermediate levels are driven by pluggable deciders so the same
//! machinery evaluates learned stacks, fixed baselines, and oracles.

use alloc::string::String;
use alloc::vec::Vec;

use crate::data::{ContextSample, LevelSpec};
use crate::policy::{MacroAction, MacroActionKind, Policy, PolicyError, PolicyFamily, SoftmaxPolicy};
use crate::rng::RngStream;

pub mod conv;
pub mod rank;
pub mod toy;

pub use conv::ConvEnv;
pub use rank::RankEnv;
pub use toy::ToyEnv;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EnvError {
    #[error("level {0} does not exist in this environment")]
    InvalidLevel(u32),
    #[error("action {action} out of range at level {level}")]
    InvalidAction { level: u32, action: usize },
    #[error("level {level} requires a lower-level policy family")]
    MissingLowerFamily { level: u32 },
    #[error("level {level} requires a decider")]
    MissingDecider { level: u32 },
    #[error("conditional policy at level {level} needs an enclosing weight-vector action")]
    ConditionalNeedsWeights { level: u32 },
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

/// Result of executing one interaction at some level.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    /// Scalar reward observed at the stepped level.
    pub reward: f64,
    /// Reward components for feedback-modification training (empty if unused).
    pub components: Vec<f64>,
    /// Rewards observed at strictly lower levels while executing this step;
    /// `lower_rewards[j]` holds the level-`(j+1)` rewards, bottom-up.
    pub lower_rewards: Vec<Vec<f64>>,
}

impl Outcome {
    pub fn scalar(reward: f64) -> Self {
        Self {
            reward,
            components: Vec::new(),
            lower_rewards: Vec::new(),
        }
    }
}

/// Decision-maker for an intermediate level during upper-level execution.
pub enum Decider<'a> {
    /// A learned softmax policy; conditional policies receive the enclosing
    /// macro action's weight vector appended to the context features.
    Policy(&'a SoftmaxPolicy),
    /// Uniform over the level's macro actions.
    Uniform,
    /// Always the given action.
    Fixed(usize),
    /// Ground-truth best action per context group (oracle skyline);
    /// indexed by the context's `group_id`.
    GroupOracle(&'a [usize]),
    /// No intervention at this level.
    Identity,
}

impl Decider<'_> {
    /// Decide an action for a context at `level`. `enclosing` is the macro
    /// action chosen one level above (needed by conditional policies).
    /// `None` means "no intervention".
    pub fn decide(
        &self,
        level: u32,
        ctx: &ContextSample,
        action_count: usize,
        enclosing: Option<&MacroAction>,
        rng: &mut RngStream,
    ) -> Result<Option<usize>, EnvError> {
        match self {
            Decider::Identity => Ok(None),
            Decider::Fixed(a) => {
                if *a >= action_count {
                    return Err(EnvError::InvalidAction { level, action: *a });
                }
                Ok(Some(*a))
            }
            Decider::Uniform => Ok(Some(rng.next_below(action_count))),
            Decider::GroupOracle(per_group) => {
                let g = ctx.group_id.unwrap_or(0) as usize;
                let a = *per_group.get(g).unwrap_or(&0);
                Ok(Some(a))
            }
            Decider::Policy(p) => {
                let (a, _) = if p.conditional_dim > 0 {
                    // Feedback modification: the enclosing action's weight
                    // vector joins the context.
                    let weights = match enclosing.map(|m| &m.kind) {
                        Some(MacroActionKind::FeedbackWeights { weights }) => weights.clone(),
                        _ => return Err(EnvError::ConditionalNeedsWeights { level }),
                    };
                    let probs = p.distribution_with_weights(&ctx.features, &weights)?;
                    let idx = rng.sample_index(&probs);
                    (idx, probs[idx])
                } else {
                    match enclosing.map(|m| &m.kind) {
                        // Policy modification one level up transforms this
                        // policy's scores before sampling.
                        Some(
                            MacroActionKind::TemperatureMod { .. }
                            | MacroActionKind::BoostMod { .. },
                        ) => {
                            let modified =
                                crate::policy::apply_policy_modification(p, enclosing.unwrap())?;
                            modified.sample_action(&ctx.features, rng)?
                        }
                        _ => p.sample_action(&ctx.features, rng)?,
                    }
                };
                Ok(Some(a))
            }
        }
    }
}

/// The policies below the stepped level, bottom-up.
///
/// `deciders[0]` decides level-2 actions, `deciders[1]` level-3 actions, and
/// so on; only levels strictly below the stepped level are consulted.
pub struct LowerPolicies<'a> {
    pub micro_family: Option<&'a PolicyFamily>,
    pub deciders: &'a [Decider<'a>],
}

impl<'a> LowerPolicies<'a> {
    pub const EMPTY: LowerPolicies<'static> = LowerPolicies {
        micro_family: None,
        deciders: &[],
    };

    pub fn decider_for(&self, level: u32) -> Option<&Decider<'a>> {
        if level < 2 {
            return None;
        }
        self.deciders.get(level as usize - 2)
    }
}

/// Exact conditional-mean structure of an enumerable level.
pub struct EnumerableLevel {
    /// `(probability, features)` of each discrete context.
    pub contexts: Vec<(f64, Vec<f64>)>,
    /// Ground-truth group ids aligned with `contexts`.
    pub groups: Vec<u32>,
    /// `mean_rewards[context][action]`.
    pub mean_rewards: Vec<Vec<f64>>,
}

/// A leveled reward simulator.
pub trait MultiScaleEnv {
    /// Level specs, bottom-up (index 0 is level 1).
    fn levels(&self) -> &[LevelSpec];

    /// The macro action set of a level >= 2.
    fn macro_actions(&self, level: u32) -> &[MacroAction];

    /// Draw a context from the level's marginal context distribution.
    fn sample_context(&self, level: u32, rng: &mut RngStream) -> ContextSample;

    /// Execute one interaction at `level`.
    ///
    /// For `level == 1`, `action` is the micro action. For upper levels,
    /// `action` indexes the level's macro action set and the env runs
    /// `timescale_ratio` lower-level steps, consulting `lower` for the
    /// policies below. `action = None` means "no intervention at this
    /// level" (identity behavior).
    fn step(
        &self,
        level: u32,
        ctx: &ContextSample,
        action: Option<usize>,
        lower: &LowerPolicies,
        rng: &mut RngStream,
    ) -> Result<Outcome, EnvError>;

    /// Exact enumeration view, for levels with finite context/action
    /// structure and queryable mean rewards.
    fn enumerable(&self, _level: u32) -> Option<EnumerableLevel> {
        None
    }

    /// Ground-truth tables for audit, as `(file_name, csv_contents)` pairs.
    fn dump_tables(&self) -> Vec<(String, String)>;
}

/// Binomial coefficient as a count, saturating at usize::MAX.
pub(crate) fn binomial_count(n: usize, k: usize) -> usize {
    let v = toy::binomial(n, k);
    usize::try_from(v).unwrap_or(usize::MAX)
}

/// Look up a level spec or fail.
pub fn level_spec(env: &dyn MultiScaleEnv, level: u32) -> Result<&LevelSpec, EnvError> {
    env.levels()
        .iter()
        .find(|s| s.level_index == level)
        .ok_or(EnvError::InvalidLevel(level))
}

/// Helper shared by envs: pick the micro action distribution source for a
/// level-2 step, given the chosen macro index.
pub(crate) fn micro_sample(
    family: Option<&PolicyFamily>,
    macro_index: Option<usize>,
    features: &[f64],
    rng: &mut RngStream,
) -> Result<Option<(usize, f64)>, EnvError> {
    match family {
        None => Ok(None),
        Some(fam) => {
            let (a, p) = match macro_index {
                Some(idx) => fam.member_sample(idx, features, rng)?,
                None => {
                    let probs = fam.base.action_distribution(features)?;
                    let idx = rng.sample_index(&probs);
                    (idx, probs[idx])
                }
            };
            Ok(Some((a, p)))
        }
    }
}
