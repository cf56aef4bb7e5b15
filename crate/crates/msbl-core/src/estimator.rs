//! Off-policy value estimation.
//!
//! Training and evaluation both use the inverse-propensity estimate of a
//! target policy's expected reward from logged data. The clipped variant
//! caps per-example importance weights. Direct-method and doubly-robust
//! estimators are part of the named estimator interface but intentionally
//! not implemented; learning here uses plain IPS.

use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::data::{LoggedDataset, PROPENSITY_FLOOR};
use crate::env::{EnvError, LowerPolicies, MultiScaleEnv};
use crate::policy::{Policy, PolicyError, ScoreTransform, SoftmaxPolicy};
use crate::rng::RngStream;

/// Default importance-weight cap when clipping is requested without a value.
pub const DEFAULT_CLIP: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EstimatorError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("propensity {value} at interaction {index} is below the {floor} floor")]
    PropensityBelowFloor { index: usize, value: f64, floor: f64 },
    #[error("clip level must be > 0, got {0}")]
    InvalidClipLevel(f64),
    #[error("estimator '{0}' is an interface placeholder and not implemented")]
    Unsupported(&'static str),
    #[error("gradient undefined for a greedy (zero-temperature) policy")]
    GreedyNotDifferentiable,
    #[error("level {level} has no enumerable structure and no Monte Carlo budget was given")]
    NotEnumerable { level: u32 },
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Env(#[from] EnvError),
}

/// A value estimate with its sampling uncertainty.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueEstimate {
    pub value: f64,
    /// Sample standard deviation of per-example terms divided by sqrt(n).
    pub standard_error: f64,
    pub n: usize,
    pub estimator_id: String,
    pub clip_level: Option<f64>,
}

fn summarize(terms: &[f64], estimator_id: String, clip_level: Option<f64>) -> ValueEstimate {
    let n = terms.len();
    let mean = terms.iter().sum::<f64>() / n as f64;
    let standard_error = if n > 1 {
        let var = terms.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / (n - 1) as f64;
        libm::sqrt(var / n as f64)
    } else {
        0.0
    };
    ValueEstimate {
        value: mean,
        standard_error,
        n,
        estimator_id,
        clip_level,
    }
}

fn weighted_terms(
    policy: &dyn Policy,
    data: &LoggedDataset,
    clip: f64,
) -> Result<Vec<f64>, EstimatorError> {
    if data.is_empty() {
        return Err(EstimatorError::EmptyDataset);
    }
    let mut terms = Vec::with_capacity(data.len());
    for (index, it) in data.interactions.iter().enumerate() {
        if it.propensity < PROPENSITY_FLOOR {
            return Err(EstimatorError::PropensityBelowFloor {
                index,
                value: it.propensity,
                floor: PROPENSITY_FLOOR,
            });
        }
        let probs = policy.action_distribution(&it.context.features)?;
        let ratio = probs[it.action_index] / it.propensity;
        terms.push(ratio.min(clip) * it.reward);
    }
    Ok(terms)
}

/// Inverse-propensity estimate of the target policy's value on logged data:
/// `(1/n) sum_i [pi(a_i|x_i) / p_i] r_i`.
pub fn ips_value(policy: &dyn Policy, data: &LoggedDataset) -> Result<ValueEstimate, EstimatorError> {
    let terms = weighted_terms(policy, data, f64::INFINITY)?;
    Ok(summarize(&terms, String::from("ips"), None))
}

/// IPS with per-example weights capped at `clip`.
pub fn clipped_ips_value(
    policy: &dyn Policy,
    data: &LoggedDataset,
    clip: f64,
) -> Result<ValueEstimate, EstimatorError> {
    if !(clip > 0.0) {
        return Err(EstimatorError::InvalidClipLevel(clip));
    }
    let terms = weighted_terms(policy, data, clip)?;
    Ok(summarize(&terms, String::from("clipped_ips"), Some(clip)))
}

/// Gradient of the IPS objective with respect to the policy parameters,
/// via the score identity:
/// `(1/n) sum_i [pi(a_i|x_i)/p_i] r_i grad log pi(a_i|x_i)`.
///
/// For conditional policies the dataset features must already carry the
/// appended weight vector (the trainer builds such inputs internally).
pub fn ips_gradient(
    policy: &SoftmaxPolicy,
    data: &LoggedDataset,
) -> Result<Vec<f64>, EstimatorError> {
    if data.is_empty() {
        return Err(EstimatorError::EmptyDataset);
    }
    let mut grad = vec![0.0; policy.net.params.len()];
    for (index, it) in data.interactions.iter().enumerate() {
        if it.propensity < PROPENSITY_FLOOR {
            return Err(EstimatorError::PropensityBelowFloor {
                index,
                value: it.propensity,
                floor: PROPENSITY_FLOOR,
            });
        }
        accumulate_example_gradient(
            policy,
            &it.context.features,
            it.action_index,
            it.reward / it.propensity,
            &mut grad,
        )?;
    }
    let n = data.len() as f64;
    for g in &mut grad {
        *g /= n;
    }
    Ok(grad)
}

/// Add `scale * grad_theta pi(a|x)` to `acc`, where
/// `grad_theta pi(a|x) = pi(a|x) * beta_eff * (1[a=j] - pi_j)` through the
/// score network. `scale` is typically `r_i / p_i`.
pub(crate) fn accumulate_example_gradient(
    policy: &SoftmaxPolicy,
    input: &[f64],
    action: usize,
    scale: f64,
    acc: &mut [f64],
) -> Result<(), EstimatorError> {
    let beta_eff = match &policy.transform {
        ScoreTransform::Identity | ScoreTransform::Boost { .. } => policy.inverse_temperature,
        ScoreTransform::Temperature(tau) => {
            if *tau == 0.0 {
                return Err(EstimatorError::GreedyNotDifferentiable);
            }
            policy.inverse_temperature / tau.max(crate::policy::TEMPERATURE_FLOOR)
        }
    };
    let probs = policy.action_distribution(input)?;
    let coeff = scale * probs[action] * beta_eff;
    let mut upstream = Vec::with_capacity(probs.len());
    for (j, pj) in probs.iter().enumerate() {
        let indicator = if j == action { 1.0 } else { 0.0 };
        upstream.push(coeff * (indicator - pj));
    }
    let g = policy.net.backward(input, &upstream).map_err(PolicyError::from)?;
    for (a, gi) in acc.iter_mut().zip(g.iter()) {
        *a += gi;
    }
    Ok(())
}

/// How [`brute_force_value`] evaluates the expectation.
pub enum BruteForceMode<'a, 'b> {
    /// Exact enumeration; requires the env level to be enumerable.
    Enumerate,
    /// Monte Carlo rollout with the given episode budget.
    MonteCarlo {
        episodes: usize,
        lower: &'a LowerPolicies<'a>,
        rng: &'b mut RngStream,
    },
}

/// Ground-truth expected reward of a policy at one env level.
///
/// With [`BruteForceMode::Enumerate`] this is the exact probability-weighted
/// average over the level's finite context/action structure; otherwise a
/// Monte Carlo estimate with reported standard error.
pub fn brute_force_value(
    policy: &dyn Policy,
    env: &dyn MultiScaleEnv,
    level: u32,
    mode: BruteForceMode,
) -> Result<ValueEstimate, EstimatorError> {
    match mode {
        BruteForceMode::Enumerate => {
            let view = env
                .enumerable(level)
                .ok_or(EstimatorError::NotEnumerable { level })?;
            let mut value = 0.0;
            for (ctx_idx, (prob, features)) in view.contexts.iter().enumerate() {
                let action_probs = policy.action_distribution(features)?;
                let means = &view.mean_rewards[ctx_idx];
                let conditional: f64 = action_probs
                    .iter()
                    .zip(means.iter())
                    .map(|(p, m)| p * m)
                    .sum();
                value += prob * conditional;
            }
            Ok(ValueEstimate {
                value,
                standard_error: 0.0,
                n: view.contexts.len(),
                estimator_id: String::from("brute_force_enum"),
                clip_level: None,
            })
        }
        BruteForceMode::MonteCarlo {
            episodes,
            lower,
            rng,
        } => {
            if episodes == 0 {
                return Err(EstimatorError::EmptyDataset);
            }
            let mut terms = Vec::with_capacity(episodes);
            for i in 0..episodes {
                let mut ep_rng = rng.substream_indexed("brute-force-episode", i as u64);
                let ctx = env.sample_context(level, &mut ep_rng);
                let (action, _) = policy.sample_action(&ctx.features, &mut ep_rng)?;
                let outcome = env.step(level, &ctx, Some(action), lower, &mut ep_rng)?;
                terms.push(outcome.reward);
            }
            Ok(summarize(&terms, String::from("brute_force_mc"), None))
        }
    }
}

/// Named estimator interface (pluggable; only IPS variants are implemented).
pub trait OffPolicyEstimator {
    fn id(&self) -> String;
    fn estimate(
        &self,
        policy: &dyn Policy,
        data: &LoggedDataset,
    ) -> Result<ValueEstimate, EstimatorError>;
}

pub struct IpsEstimator;

impl OffPolicyEstimator for IpsEstimator {
    fn id(&self) -> String {
        String::from("ips")
    }
    fn estimate(
        &self,
        policy: &dyn Policy,
        data: &LoggedDataset,
    ) -> Result<ValueEstimate, EstimatorError> {
        ips_value(policy, data)
    }
}

pub struct ClippedIpsEstimator {
    pub clip: f64,
}

impl OffPolicyEstimator for ClippedIpsEstimator {
    fn id(&self) -> String {
        String::from("clipped_ips")
    }
    fn estimate(
        &self,
        policy: &dyn Policy,
        data: &LoggedDataset,
    ) -> Result<ValueEstimate, EstimatorError> {
        clipped_ips_value(policy, data, self.clip)
    }
}

/// Estimator selection, e.g. from an experiment config.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EstimatorKind {
    Ips,
    /// Clip level; `None` selects [`DEFAULT_CLIP`].
    ClippedIps(Option<f64>),
    DirectMethod,
    DoublyRobust,
}

/// Instantiate an estimator. Direct-method and doubly-robust are named
/// extension points and return [`EstimatorError::Unsupported`].
pub fn build_estimator(kind: EstimatorKind) -> Result<Box<dyn OffPolicyEstimator>, EstimatorError> {
    match kind {
        EstimatorKind::Ips => Ok(Box::new(IpsEstimator)),
        EstimatorKind::ClippedIps(clip) => {
            let clip = clip.unwrap_or(DEFAULT_CLIP);
            if !(clip > 0.0) {
                return Err(EstimatorError::InvalidClipLevel(clip));
            }
            Ok(Box::new(ClippedIpsEstimator { clip }))
        }
        EstimatorKind::DirectMethod => Err(EstimatorError::Unsupported("direct_method")),
        EstimatorKind::DoublyRobust => Err(EstimatorError::Unsupported("doubly_robust")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baseline::UniformPolicy;
    use crate::data::{ContextSample, LoggedInteraction};
    use crate::net::{NetworkSpec, ScoringNet};
    use proptest::prelude::*;

    fn interaction(features: Vec<f64>, action: usize, reward: f64, propensity: f64) -> LoggedInteraction {
        LoggedInteraction {
            context: ContextSample::new(1, features),
            action_index: action,
            reward,
            reward_components: Vec::new(),
            propensity,
        }
    }

    fn uniform_logged(rewards: &[f64], actions: usize) -> LoggedDataset {
        let mut d = LoggedDataset::new(1, "uniform");
        for (i, r) in rewards.iter().enumerate() {
            d.interactions
                .push(interaction(vec![0.0], i % actions, *r, 1.0 / actions as f64));
        }
        d
    }

    #[test]
    fn target_equals_logger_gives_mean_reward() {
        let rewards = [0.3, 0.9, 0.0, 0.5];
        let d = uniform_logged(&rewards, 4);
        let policy = UniformPolicy::new(4);
        let est = ips_value(&policy, &d).unwrap();
        let mean = rewards.iter().sum::<f64>() / rewards.len() as f64;
        assert!((est.value - mean).abs() < 1e-15);
    }

    #[test]
    fn all_zero_rewards_give_zero_value() {
        let d = uniform_logged(&[0.0; 8], 2);
        let est = ips_value(&UniformPolicy::new(2), &d).unwrap();
        assert_eq!(est.value, 0.0);
        assert_eq!(est.standard_error, 0.0);
    }

    /// Deterministic 2-action policy built from fixed scores so the
    /// pi/p ratios in tests are exact.
    fn two_action_policy(p0: f64) -> crate::policy::SoftmaxPolicy {
        // One linear layer on a single feature that is always 0, so the
        // bias terms fully determine the distribution: softmax(b) = (p0, 1-p0).
        let b0 = libm::log(p0);
        let b1 = libm::log(1.0 - p0);
        let spec = NetworkSpec::new(1, vec![], 2);
        let net = ScoringNet::new(spec, vec![0.0, 0.0, b0, b1]).unwrap();
        crate::policy::SoftmaxPolicy::new(net, 1.0)
    }

    #[test]
    fn hand_built_ratios_match_hand_arithmetic() {
        // Logged under uniform (p = 0.5). Target assigns 1.0 -> ratios:
        // action 0: 2.0, action 1: 0.5 at p0 = 0.999... Use p0 so ratios are
        // exactly (2.0, 0.5): need pi0 = 1.0 which softmax can't produce, so
        // instead pick pi0 = 0.8 / pi1 = 0.2 -> ratios (1.6, 0.4).
        let policy = two_action_policy(0.8);
        let mut d = LoggedDataset::new(1, "uniform");
        d.interactions.push(interaction(vec![0.0], 0, 1.0, 0.5)); // term 1.6
        d.interactions.push(interaction(vec![0.0], 1, 1.0, 0.5)); // term 0.4
        d.interactions.push(interaction(vec![0.0], 0, 0.0, 0.5)); // term 0.0
        let est = ips_value(&policy, &d).unwrap();
        assert!((est.value - (1.6 + 0.4 + 0.0) / 3.0).abs() < 1e-12);
        assert_eq!(est.n, 3);
    }

    #[test]
    fn infinite_clip_equals_plain_ips() {
        let policy = two_action_policy(0.9);
        let d = uniform_logged(&[1.0, 0.5, 0.25, 0.125], 2);
        let a = ips_value(&policy, &d).unwrap();
        let b = clipped_ips_value(&policy, &d, f64::INFINITY).unwrap();
        assert_eq!(a.value, b.value);
    }

    #[test]
    fn tiny_clip_drives_value_to_zero() {
        let policy = two_action_policy(0.9);
        let d = uniform_logged(&[1.0, 1.0], 2);
        let est = clipped_ips_value(&policy, &d, 1e-12).unwrap();
        assert!(est.value < 1e-11);
    }

    #[test]
    fn clip_replaces_large_ratio() {
        // Ratio 10 on the first interaction (pi = 0.5 at p = 0.05), clipped to 2.
        let policy = two_action_policy(0.5);
        let mut d = LoggedDataset::new(1, "skewed");
        d.interactions.push(interaction(vec![0.0], 0, 1.0, 0.05));
        d.interactions.push(interaction(vec![0.0], 1, 1.0, 0.5));
        let plain = ips_value(&policy, &d).unwrap();
        assert!((plain.value - (10.0 + 1.0) / 2.0).abs() < 1e-12);
        let clipped = clipped_ips_value(&policy, &d, 2.0).unwrap();
        assert!((clipped.value - (2.0 + 1.0) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_clip_is_rejected() {
        let policy = two_action_policy(0.5);
        let d = uniform_logged(&[1.0], 2);
        assert!(matches!(
            clipped_ips_value(&policy, &d, 0.0),
            Err(EstimatorError::InvalidClipLevel(_))
        ));
    }

    #[test]
    fn empty_dataset_is_an_error() {
        let policy = two_action_policy(0.5);
        let d = LoggedDataset::new(1, "empty");
        assert!(matches!(
            ips_value(&policy, &d),
            Err(EstimatorError::EmptyDataset)
        ));
    }

    #[test]
    fn propensity_below_floor_is_an_error() {
        let policy = two_action_policy(0.5);
        let mut d = LoggedDataset::new(1, "bad");
        d.interactions.push(interaction(vec![0.0], 0, 1.0, 1e-13));
        assert!(matches!(
            ips_value(&policy, &d),
            Err(EstimatorError::PropensityBelowFloor { index: 0, .. })
        ));
    }

    #[test]
    fn zero_rewards_give_zero_gradient() {
        let mut rng = RngStream::new(2);
        let spec = NetworkSpec::new(2, vec![4], 3);
        let policy =
            crate::policy::SoftmaxPolicy::new(ScoringNet::init(spec, &mut rng), 1.0);
        let mut d = LoggedDataset::new(1, "uniform");
        for a in 0..3 {
            d.interactions
                .push(interaction(vec![0.1, -0.2], a, 0.0, 1.0 / 3.0));
        }
        let grad = ips_gradient(&policy, &d).unwrap();
        assert!(grad.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn single_interaction_linear_softmax_gradient_closed_form() {
        // Linear 1-feature, 2-action policy; interaction on action 0.
        // d/d theta of pi(0|x) / p * r = (r/p) pi0 pi1 * d(s0 - s1)/d theta.
        let spec = NetworkSpec::new(1, vec![], 2);
        let params = vec![0.4, -0.3, 0.1, -0.1]; // w0, w1, b0, b1
        let net = ScoringNet::new(spec, params.clone()).unwrap();
        let policy = crate::policy::SoftmaxPolicy::new(net, 1.0);
        let x = 0.7;
        let (r, p) = (1.0, 0.5);
        let mut d = LoggedDataset::new(1, "uniform");
        d.interactions.push(interaction(vec![x], 0, r, p));
        let grad = ips_gradient(&policy, &d).unwrap();

        let s0 = params[0] * x + params[2];
        let s1 = params[1] * x + params[3];
        let z = libm::exp(s0) + libm::exp(s1);
        let pi0 = libm::exp(s0) / z;
        let pi1 = libm::exp(s1) / z;
        let c = (r / p) * pi0;
        // Upstream (1 - pi0) on score 0 and -pi1 on score 1, through the
        // linear layer: dw0 = c(1-pi0)x, dw1 = -c pi1 x, db0 = c(1-pi0), db1 = -c pi1.
        let want = [c * (1.0 - pi0) * x, -c * pi1 * x, c * (1.0 - pi0), -c * pi1];
        for (g, w) in grad.iter().zip(want.iter()) {
            assert!((g - w).abs() < 1e-12, "grad {g} vs closed form {w}");
        }
    }

    #[test]
    fn gradient_matches_finite_differences_on_random_instances() {
        let mut rng = RngStream::new(77);
        for trial in 0..20 {
            let spec = NetworkSpec::new(2, vec![3], 3);
            let mut policy =
                crate::policy::SoftmaxPolicy::new(ScoringNet::init(spec, &mut rng), 1.0);
            let mut d = LoggedDataset::new(1, "uniform");
            for _ in 0..5 {
                let f = vec![rng.next_f64() * 2.0 - 1.0, rng.next_f64() * 2.0 - 1.0];
                let a = rng.next_below(3);
                let r = rng.next_f64();
                d.interactions.push(interaction(f, a, r, 1.0 / 3.0));
            }
            let grad = ips_gradient(&policy, &d).unwrap();
            let eps = 1e-5;
            let mut max_rel = 0.0f64;
            for i in 0..policy.net.params.len() {
                let orig = policy.net.params[i];
                policy.net.params[i] = orig + eps;
                let up = ips_value(&policy, &d).unwrap().value;
                policy.net.params[i] = orig - eps;
                let down = ips_value(&policy, &d).unwrap().value;
                policy.net.params[i] = orig;
                let fd = (up - down) / (2.0 * eps);
                let denom = fd.abs().max(grad[i].abs()).max(1e-6);
                max_rel = max_rel.max((fd - grad[i]).abs() / denom);
            }
            assert!(max_rel <= 1e-4, "trial {trial}: max rel err {max_rel}");
        }
    }

    #[test]
    fn unsupported_estimators_error_through_the_interface() {
        assert!(build_estimator(EstimatorKind::Ips).is_ok());
        assert!(build_estimator(EstimatorKind::ClippedIps(None)).is_ok());
        assert!(matches!(
            build_estimator(EstimatorKind::DirectMethod),
            Err(EstimatorError::Unsupported("direct_method"))
        ));
        assert!(matches!(
            build_estimator(EstimatorKind::DoublyRobust),
            Err(EstimatorError::Unsupported("doubly_robust"))
        ));
    }

    proptest! {
        /// Clipping dominance: per-example clipped weights never exceed the
        /// unclipped ones, so with non-negative rewards the clipped value is
        /// at most the plain IPS value.
        #[test]
        fn clipping_dominance(
            rewards in proptest::collection::vec(0.0f64..1.0, 1..40),
            p0 in 0.05f64..0.95,
            clip in 0.1f64..5.0,
        ) {
            let policy = two_action_policy(p0);
            let mut d = LoggedDataset::new(1, "uniform");
            for (i, r) in rewards.iter().enumerate() {
                d.interactions.push(interaction(vec![0.0], i % 2, *r, 0.5));
            }
            let plain = ips_value(&policy, &d).unwrap().value;
            let clipped = clipped_ips_value(&policy, &d, clip).unwrap().value;
            prop_assert!(clipped <= plain + 1e-12);
        }
    }
}
