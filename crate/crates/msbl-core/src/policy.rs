//! Softmax bandit policies, macro interventions, and policy families.
//!
//! A macro action at level `k` is an intervention on the level-`(k-1)`
//! policy. Two constructions are supported:
//!
//! - **Policy modification**: transform a single trained policy's scores —
//!   rescale them by an inverse temperature factor or boost a target subset
//!   of actions. The family is the set of transformed policies.
//! - **Feedback modification**: train one policy conditioned on a macro
//!   weight vector appended to its input; each weight vector scalarizes a
//!   multi-component reward. The family is the conditional policy evaluated
//!   at each weight vector.

use alloc::vec::Vec;

use crate::net::{NetError, ScoringNet};
use crate::rng::RngStream;

/// Temperature divisor floor for strictly positive temperatures.
pub const TEMPERATURE_FLOOR: f64 = 1e-3;

/// Scale applied to macro weight vectors when they join the network input
/// of a conditional policy. Context features are typically O(1.5); scaling
/// the 0/1 weight entries keeps the conditioning pathway's gradients
/// comparable to the context pathway's from the first epoch.
pub const WEIGHT_INPUT_SCALE: f64 = 3.0;

/// Network input of a conditional policy: context features with the scaled
/// weight vector appended.
pub fn conditional_input(features: &[f64], weights: &[f64]) -> alloc::vec::Vec<f64> {
    let mut input = alloc::vec::Vec::with_capacity(features.len() + weights.len());
    input.extend_from_slice(features);
    input.extend(weights.iter().map(|w| w * WEIGHT_INPUT_SCALE));
    input
}

/// Softmax distributions must renormalize to 1 within this tolerance.
pub const NORMALIZATION_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PolicyError {
    #[error("feature length {got} does not match expected input dim {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("scoring network produced a non-finite score")]
    NonFiniteScore,
    #[error("temperature must be >= 0, got {0}")]
    NegativeTemperature(f64),
    #[error("macro action kind not valid here")]
    WrongMacroKind,
    #[error("weight vector length {got} does not match conditional dim {expected}")]
    WeightLengthMismatch { expected: usize, got: usize },
    #[error("macro action index {index} out of range for family of size {size}")]
    MacroIndexOutOfRange { index: usize, size: usize },
    #[error("boost target set is empty")]
    EmptyBoostTargets,
    #[error(transparent)]
    Net(#[from] NetError),
}

/// Anything that maps features to a distribution over a fixed action set.
pub trait Policy {
    fn action_count(&self) -> usize;

    /// Probability of every action at the given features. Strictly positive
    /// and summing to 1 within [`NORMALIZATION_TOL`] for finite-temperature
    /// softmax policies; degenerate policies (greedy, fixed) may return 0/1.
    fn action_distribution(&self, features: &[f64]) -> Result<Vec<f64>, PolicyError>;

    /// Draw an action; returns `(action_index, propensity)` where the
    /// propensity is the distribution's probability at the drawn index.
    fn sample_action(
        &self,
        features: &[f64],
        rng: &mut RngStream,
    ) -> Result<(usize, f64), PolicyError> {
        let probs = self.action_distribution(features)?;
        let idx = rng.sample_index(&probs);
        Ok((idx, probs[idx]))
    }
}

/// Numerically stable softmax of `beta * scores`.
pub fn softmax(scores: &[f64], beta: f64) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = scores
        .iter()
        .map(|s| libm::exp(beta * (s - max)))
        .collect();
    let sum: f64 = out.iter().sum();
    for p in &mut out {
        *p /= sum;
    }
    out
}

/// Shannon entropy of a probability vector (natural log).
pub fn entropy(probs: &[f64]) -> f64 {
    probs
        .iter()
        .filter(|p| **p > 0.0)
        .map(|p| -p * libm::log(*p))
        .sum()
}

/// Score-space transform applied before the softmax (policy modification).
#[derive(Debug, Clone, PartialEq)]
pub enum ScoreTransform {
    Identity,
    /// Divide scores by `max(tau, TEMPERATURE_FLOOR)`; `tau == 0` is the
    /// greedy policy with lowest-index tie-breaking.
    Temperature(f64),
    /// Add `delta` to every score in the target set.
    Boost { delta: f64, targets: Vec<usize> },
}

impl ScoreTransform {
    fn apply(&self, scores: &mut [f64]) {
        match self {
            ScoreTransform::Identity => {}
            ScoreTransform::Temperature(tau) => {
                let t = tau.max(TEMPERATURE_FLOOR);
                for s in scores.iter_mut() {
                    *s /= t;
                }
            }
            ScoreTransform::Boost { delta, targets } => {
                for t in targets {
                    if let Some(s) = scores.get_mut(*t) {
                        *s += delta;
                    }
                }
            }
        }
    }

    fn is_greedy(&self) -> bool {
        matches!(self, ScoreTransform::Temperature(tau) if *tau == 0.0)
    }
}

/// An upper-level intervention.
#[derive(Debug, Clone, PartialEq)]
pub enum MacroActionKind {
    /// Rescale the lower policy's scores by `1 / max(tau, floor)`.
    TemperatureMod { tau: f64 },
    /// Add `boost` to the scores of a target action subset.
    BoostMod { boost: f64, target_set: Vec<usize> },
    /// Scalarize a multi-component reward with non-negative weights
    /// (feedback modification; the lower policy is conditional on these).
    FeedbackWeights { weights: Vec<f64> },
}

/// A macro action with its position in the macro action space.
#[derive(Debug, Clone, PartialEq)]
pub struct MacroAction {
    pub kind: MacroActionKind,
    pub index: usize,
}

impl MacroAction {
    pub fn temperature(index: usize, tau: f64) -> Self {
        Self {
            kind: MacroActionKind::TemperatureMod { tau },
            index,
        }
    }

    pub fn boost(index: usize, boost: f64, target_set: Vec<usize>) -> Self {
        Self {
            kind: MacroActionKind::BoostMod { boost, target_set },
            index,
        }
    }

    pub fn weights(index: usize, weights: Vec<f64>) -> Self {
        Self {
            kind: MacroActionKind::FeedbackWeights { weights },
            index,
        }
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        match &self.kind {
            MacroActionKind::TemperatureMod { tau } => {
                if *tau < 0.0 || !tau.is_finite() {
                    return Err(PolicyError::NegativeTemperature(*tau));
                }
            }
            MacroActionKind::BoostMod { target_set, .. } => {
                if target_set.is_empty() {
                    return Err(PolicyError::EmptyBoostTargets);
                }
            }
            MacroActionKind::FeedbackWeights { weights } => {
                if weights.iter().any(|w| *w < 0.0 || !w.is_finite()) {
                    return Err(PolicyError::WrongMacroKind);
                }
            }
        }
        Ok(())
    }
}

/// A parameterized softmax policy `pi(a | x) = softmax(beta * scores(x))`.
///
/// `conditional_dim > 0` marks a feedback-modification policy whose network
/// input is the context concatenated with a macro weight vector of that
/// length.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxPolicy {
    pub net: ScoringNet,
    pub inverse_temperature: f64,
    pub conditional_dim: usize,
    pub transform: ScoreTransform,
}

impl SoftmaxPolicy {
    pub fn new(net: ScoringNet, inverse_temperature: f64) -> Self {
        assert!(inverse_temperature > 0.0, "inverse temperature must be > 0");
        Self {
            net,
            inverse_temperature,
            conditional_dim: 0,
            transform: ScoreTransform::Identity,
        }
    }

    pub fn new_conditional(net: ScoringNet, inverse_temperature: f64, weight_dim: usize) -> Self {
        assert!(weight_dim > 0);
        let mut p = Self::new(net, inverse_temperature);
        p.conditional_dim = weight_dim;
        p
    }

    /// Length of the raw context features this policy expects (network input
    /// minus any appended weight vector).
    pub fn context_dim(&self) -> usize {
        self.net.spec.input_dim - self.conditional_dim
    }

    /// Transformed scores at the full network input.
    fn scores(&self, input: &[f64]) -> Result<Vec<f64>, PolicyError> {
        let mut scores = self.net.forward(input)?;
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(PolicyError::NonFiniteScore);
        }
        self.transform.apply(&mut scores);
        Ok(scores)
    }

    /// Greedy one-hot distribution with lowest-index tie-breaking.
    fn greedy(scores: &[f64]) -> Vec<f64> {
        let mut best = 0;
        for (i, s) in scores.iter().enumerate() {
            if *s > scores[best] {
                best = i;
            }
        }
        let mut out = alloc::vec![0.0; scores.len()];
        out[best] = 1.0;
        out
    }

    /// Distribution of a conditional policy at `(features, weights)`.
    pub fn distribution_with_weights(
        &self,
        features: &[f64],
        weights: &[f64],
    ) -> Result<Vec<f64>, PolicyError> {
        if weights.len() != self.conditional_dim {
            return Err(PolicyError::WeightLengthMismatch {
                expected: self.conditional_dim,
                got: weights.len(),
            });
        }
        self.action_distribution(&conditional_input(features, weights))
    }
}

impl Policy for SoftmaxPolicy {
    fn action_count(&self) -> usize {
        self.net.spec.output_dim
    }

    fn action_distribution(&self, features: &[f64]) -> Result<Vec<f64>, PolicyError> {
        let scores = self.scores(features)?;
        if self.transform.is_greedy() {
            return Ok(Self::greedy(&scores));
        }
        Ok(softmax(&scores, self.inverse_temperature))
    }
}

/// Apply a policy-modification macro action, returning the modified policy.
///
/// The base policy is not mutated; its parameters are shared structurally by
/// clone. Feedback-weight actions are not policy modifications.
pub fn apply_policy_modification(
    base: &SoftmaxPolicy,
    action: &MacroAction,
) -> Result<SoftmaxPolicy, PolicyError> {
    action.validate()?;
    let transform = match &action.kind {
        MacroActionKind::TemperatureMod { tau } => ScoreTransform::Temperature(*tau),
        MacroActionKind::BoostMod { boost, target_set } => ScoreTransform::Boost {
            delta: *boost,
            targets: target_set.clone(),
        },
        MacroActionKind::FeedbackWeights { .. } => return Err(PolicyError::WrongMacroKind),
    };
    let mut modified = base.clone();
    modified.transform = transform;
    Ok(modified)
}

/// How a family of lower-level policies is constructed from one trained policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FamilyMode {
    PolicyModification,
    FeedbackModification,
}

/// A finite family of lower-level policies indexed by macro actions.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyFamily {
    pub base: SoftmaxPolicy,
    pub macro_actions: Vec<MacroAction>,
    pub mode: FamilyMode,
}

impl PolicyFamily {
    pub fn new(
        base: SoftmaxPolicy,
        macro_actions: Vec<MacroAction>,
        mode: FamilyMode,
    ) -> Result<Self, PolicyError> {
        for m in &macro_actions {
            m.validate()?;
            match (mode, &m.kind) {
                (FamilyMode::PolicyModification, MacroActionKind::FeedbackWeights { .. }) => {
                    return Err(PolicyError::WrongMacroKind)
                }
                (FamilyMode::FeedbackModification, MacroActionKind::FeedbackWeights { weights }) => {
                    if weights.len() != base.conditional_dim {
                        return Err(PolicyError::WeightLengthMismatch {
                            expected: base.conditional_dim,
                            got: weights.len(),
                        });
                    }
                }
                (FamilyMode::FeedbackModification, _) => return Err(PolicyError::WrongMacroKind),
                _ => {}
            }
        }
        if mode == FamilyMode::FeedbackModification && base.conditional_dim == 0 {
            return Err(PolicyError::WrongMacroKind);
        }
        Ok(Self {
            base,
            macro_actions,
            mode,
        })
    }

    pub fn size(&self) -> usize {
        self.macro_actions.len()
    }

    fn action(&self, index: usize) -> Result<&MacroAction, PolicyError> {
        self.macro_actions
            .get(index)
            .ok_or(PolicyError::MacroIndexOutOfRange {
                index,
                size: self.macro_actions.len(),
            })
    }

    /// Distribution of family member `index` at the given context features.
    pub fn member_distribution(
        &self,
        index: usize,
        features: &[f64],
    ) -> Result<Vec<f64>, PolicyError> {
        let action = self.action(index)?;
        match (&self.mode, &action.kind) {
            (FamilyMode::PolicyModification, _) => {
                let modified = apply_policy_modification(&self.base, action)?;
                modified.action_distribution(features)
            }
            (FamilyMode::FeedbackModification, MacroActionKind::FeedbackWeights { weights }) => {
                self.base.distribution_with_weights(features, weights)
            }
            _ => Err(PolicyError::WrongMacroKind),
        }
    }

    /// Sample an action from family member `index`.
    pub fn member_sample(
        &self,
        index: usize,
        features: &[f64],
        rng: &mut RngStream,
    ) -> Result<(usize, f64), PolicyError> {
        let probs = self.member_distribution(index, features)?;
        let idx = rng.sample_index(&probs);
        Ok((idx, probs[idx]))
    }

    /// Borrowed view of one member as a [`Policy`].
    pub fn member(&self, index: usize) -> FamilyMember<'_> {
        FamilyMember {
            family: self,
            index,
        }
    }
}

/// One family member, usable wherever a [`Policy`] is expected.
pub struct FamilyMember<'a> {
    family: &'a PolicyFamily,
    index: usize,
}

impl Policy for FamilyMember<'_> {
    fn action_count(&self) -> usize {
        self.family.base.action_count()
    }

    fn action_distribution(&self, features: &[f64]) -> Result<Vec<f64>, PolicyError> {
        self.family.member_distribution(self.index, features)
    }
}

/// Evaluate a feedback-modification family's conditional policy at an
/// explicit weight-vector macro action.
pub fn conditional_distribution(
    family: &PolicyFamily,
    features: &[f64],
    action: &MacroAction,
) -> Result<Vec<f64>, PolicyError> {
    if family.mode != FamilyMode::FeedbackModification {
        return Err(PolicyError::WrongMacroKind);
    }
    match &action.kind {
        MacroActionKind::FeedbackWeights { weights } => {
            family.base.distribution_with_weights(features, weights)
        }
        _ => Err(PolicyError::WrongMacroKind),
    }
}
