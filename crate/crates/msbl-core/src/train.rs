//! Stochastic gradient-ascent training of softmax policies on the
//! inverse-propensity objective.
//!
//! The optimizer is adaptive-moment ascent with decoupled weight decay.
//! Plain mode maximizes the IPS estimate of the scalar reward. Conditional
//! mode trains one policy for a whole feedback-modification family: each
//! epoch draws a macro weight vector per example uniformly from the macro
//! action set, appends it to the context, and uses the scalarized reward
//! `w . reward_components`. Training keeps the parameters of the best
//! epoch-end objective over the full training set.

use alloc::vec;
use alloc::vec::Vec;

use crate::data::{LoggedDataset, PROPENSITY_FLOOR};
use crate::estimator::{accumulate_example_gradient, EstimatorError};
use crate::net::{NetworkSpec, ScoringNet};
use crate::policy::{Policy, SoftmaxPolicy};
use crate::rng::RngStream;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error("training dataset is empty")]
    EmptyDataset,
    #[error("conditional training requires reward components of length {expected}, interaction {index} has {got}")]
    MissingComponents { index: usize, expected: usize, got: usize },
    #[error("conditional training requires a non-empty weight set")]
    EmptyWeightSet,
    #[error("network input dim {input_dim} must equal context dim {context_dim} plus weight dim {weight_dim}")]
    InputDimMismatch { input_dim: usize, context_dim: usize, weight_dim: usize },
    #[error("non-finite objective at epoch {epoch}; training aborted")]
    NonFiniteLoss { epoch: usize },
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Policy(#[from] crate::policy::PolicyError),
}

/// Optimizer hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Adaptive-moment smoothing constants.
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    /// Independent training restarts; the run with the best epoch-end
    /// objective wins (ties to the earliest restart). Softmax ascent can
    /// lock into a saturated argmax before weaker conditioning signals
    /// break symmetry; restarts with model selection make that a retry
    /// instead of a failure.
    pub restarts: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            weight_decay: 0.0,
            batch_size: 64,
            epochs: 120,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            restarts: 1,
        }
    }
}

/// Plain scalar-reward training or conditional family training.
#[derive(Debug, Clone)]
pub enum TrainMode {
    Plain,
    /// The finite set of macro weight vectors the conditional policy is
    /// trained against (drawn uniformly per example per epoch).
    Conditional { weight_set: Vec<Vec<f64>> },
}

/// A trained policy plus its epoch-end objective trace.
#[derive(Debug, Clone)]
pub struct TrainResult {
    pub policy: SoftmaxPolicy,
    /// Full-training-set IPS objective after each epoch.
    pub epoch_objectives: Vec<f64>,
    pub best_epoch: usize,
}

struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    /// Ascent step with decoupled weight decay.
    fn step(&mut self, params: &mut [f64], grad: &[f64], cfg: &OptimizerConfig) {
        self.t += 1;
        let bc1 = 1.0 - libm::pow(cfg.beta1, self.t as f64);
        let bc2 = 1.0 - libm::pow(cfg.beta2, self.t as f64);
        for i in 0..params.len() {
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * grad[i];
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] += cfg.learning_rate * m_hat / (libm::sqrt(v_hat) + cfg.epsilon);
            params[i] -= cfg.learning_rate * cfg.weight_decay * params[i];
        }
    }
}

/// One training example after conditional expansion.
struct Example {
    input: Vec<f64>,
    action: usize,
    scale: f64, // reward / propensity
}

fn scalarize(components: &[f64], weights: &[f64]) -> f64 {
    components
        .iter()
        .zip(weights.iter())
        .map(|(c, w)| c * w)
        .sum()
}

/// IPS objective of a policy over explicit examples (inputs already carry
/// any appended weight vectors).
fn objective(policy: &SoftmaxPolicy, examples: &[Example]) -> Result<f64, TrainError> {
    let mut total = 0.0;
    for ex in examples {
        let probs = policy.action_distribution(&ex.input)?;
        total += probs[ex.action] * ex.scale;
    }
    Ok(total / examples.len() as f64)
}

/// Epoch-end objective: plain IPS, or the average over the full weight set
/// for conditional training (deterministic, no sampling).
fn epoch_objective(
    policy: &SoftmaxPolicy,
    data: &LoggedDataset,
    mode: &TrainMode,
) -> Result<f64, TrainError> {
    match mode {
        TrainMode::Plain => {
            let examples: Vec<Example> = data
                .interactions
                .iter()
                .map(|it| Example {
                    input: it.context.features.clone(),
                    action: it.action_index,
                    scale: it.reward / it.propensity,
                })
                .collect();
            objective(policy, &examples)
        }
        TrainMode::Conditional { weight_set } => {
            let mut total = 0.0;
            for weights in weight_set {
                let examples: Vec<Example> = data
                    .interactions
                    .iter()
                    .map(|it| Example {
                        input: crate::policy::conditional_input(&it.context.features, weights),
                        action: it.action_index,
                        scale: scalarize(&it.reward_components, weights) / it.propensity,
                    })
                    .collect();
                total += objective(policy, &examples)?;
            }
            Ok(total / weight_set.len() as f64)
        }
    }
}

/// Train a softmax policy on logged data.
///
/// The scoring network is initialized from the optimizer seed; shuffling and
/// conditional weight draws come from the same stream, so identical
/// (seed, config, data) yield bit-identical parameters. With
/// `cfg.restarts > 1`, independent restarts run from labeled sub-streams and
/// the best epoch-end objective wins.
pub fn train_policy(
    data: &LoggedDataset,
    net_spec: NetworkSpec,
    inverse_temperature: f64,
    cfg: &OptimizerConfig,
    mode: &TrainMode,
) -> Result<TrainResult, TrainError> {
    let restarts = cfg.restarts.max(1);
    let mut best: Option<TrainResult> = None;
    for restart in 0..restarts {
        let mut rng = RngStream::new(cfg.seed)
            .substream_indexed("train-policy", restart as u64);
        let result = train_policy_once(
            data,
            net_spec.clone(),
            inverse_temperature,
            cfg,
            mode,
            restart,
            &mut rng,
        )?;
        let score = result.epoch_objectives[result.best_epoch];
        let better = match &best {
            None => true,
            Some(b) => score > b.epoch_objectives[b.best_epoch],
        };
        if better {
            best = Some(result);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn train_policy_once(
    data: &LoggedDataset,
    net_spec: NetworkSpec,
    inverse_temperature: f64,
    cfg: &OptimizerConfig,
    mode: &TrainMode,
    restart: usize,
    rng: &mut RngStream,
) -> Result<TrainResult, TrainError> {
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let context_dim = data.interactions[0].context.features.len();
    let weight_dim = match mode {
        TrainMode::Plain => 0,
        TrainMode::Conditional { weight_set } => {
            if weight_set.is_empty() {
                return Err(TrainError::EmptyWeightSet);
            }
            let dim = weight_set[0].len();
            for (index, it) in data.interactions.iter().enumerate() {
                if it.reward_components.len() != dim {
                    return Err(TrainError::MissingComponents {
                        index,
                        expected: dim,
                        got: it.reward_components.len(),
                    });
                }
            }
            dim
        }
    };
    if net_spec.input_dim != context_dim + weight_dim {
        return Err(TrainError::InputDimMismatch {
            input_dim: net_spec.input_dim,
            context_dim,
            weight_dim,
        });
    }
    for (index, it) in data.interactions.iter().enumerate() {
        if it.propensity < PROPENSITY_FLOOR {
            return Err(TrainError::Estimator(EstimatorError::PropensityBelowFloor {
                index,
                value: it.propensity,
                floor: PROPENSITY_FLOOR,
            }));
        }
    }

    let mut net = ScoringNet::init(net_spec, rng);
    if weight_dim > 0 && restart > 0 {
        // Later restarts break symmetry harder along the conditioning
        // pathway: the appended-weight input columns start progressively
        // larger, so different restarts commit to different specializations
        // and model selection can pick the weight-aware optimum.
        let scale = (1u64 << restart.min(6)) as f64;
        let spec = &net.spec;
        let fan_in = spec.input_dim;
        let fan_out = *spec.hidden_dims.first().unwrap_or(&spec.output_dim);
        for o in 0..fan_out {
            for i in (fan_in - weight_dim)..fan_in {
                net.params[o * fan_in + i] *= scale;
            }
        }
    }
    let mut policy = if weight_dim > 0 {
        SoftmaxPolicy::new_conditional(net, inverse_temperature, weight_dim)
    } else {
        SoftmaxPolicy::new(net, inverse_temperature)
    };

    let n = data.len();
    let mut adam = AdamState::new(policy.net.params.len());
    let mut best_params = policy.net.params.clone();
    let mut best_objective = f64::NEG_INFINITY;
    let mut best_epoch = 0usize;
    let mut epoch_objectives = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        // Materialize this epoch's examples (conditional draws included).
        let examples: Vec<Example> = match mode {
            TrainMode::Plain => data
                .interactions
                .iter()
                .map(|it| Example {
                    input: it.context.features.clone(),
                    action: it.action_index,
                    scale: it.reward / it.propensity,
                })
                .collect(),
            TrainMode::Conditional { weight_set } => data
                .interactions
                .iter()
                .map(|it| {
                    let weights = &weight_set[rng.next_below(weight_set.len())];
                    Example {
                        input: crate::policy::conditional_input(&it.context.features, weights),
                        action: it.action_index,
                        scale: scalarize(&it.reward_components, weights) / it.propensity,
                    }
                })
                .collect(),
        };
        let order = rng.permutation(n);
        let mut grad = vec![0.0; policy.net.params.len()];
        for batch in order.chunks(cfg.batch_size) {
            for g in grad.iter_mut() {
                *g = 0.0;
            }
            for idx in batch {
                let ex = &examples[*idx];
                accumulate_example_gradient(&policy, &ex.input, ex.action, ex.scale, &mut grad)?;
            }
            let scale = 1.0 / batch.len() as f64;
            for g in grad.iter_mut() {
                *g *= scale;
            }
            adam.step(&mut policy.net.params, &grad, cfg);
        }
        let obj = epoch_objective(&policy, data, mode)?;
        if !obj.is_finite() {
            return Err(TrainError::NonFiniteLoss { epoch });
        }
        epoch_objectives.push(obj);
        if obj > best_objective {
            best_objective = obj;
            best_epoch = epoch;
            best_params.copy_from_slice(&policy.net.params);
        }
    }
    policy.net.params = best_params;
    Ok(TrainResult {
        policy,
        epoch_objectives,
        best_epoch,
    })
}

/// Compare an analytic gradient against central finite differences of
/// `objective`, over a random coordinate subset of size up to `max_coords`
/// (all coordinates when fewer). Returns the maximum relative error.
pub fn finite_difference_check(
    params: &[f64],
    objective: impl Fn(&[f64]) -> f64,
    analytic: &[f64],
    eps: f64,
    max_coords: usize,
    rng: &mut RngStream,
) -> f64 {
    assert_eq!(params.len(), analytic.len());
    let coords: Vec<usize> = if params.len() <= max_coords {
        (0..params.len()).collect()
    } else {
        let mut perm = rng.permutation(params.len());
        perm.truncate(max_coords);
        perm
    };
    let mut work = params.to_vec();
    let mut max_rel = 0.0f64;
    for i in coords {
        let orig = work[i];
        work[i] = orig + eps;
        let up = objective(&work);
        work[i] = orig - eps;
        let down = objective(&work);
        work[i] = orig;
        let fd = (up - down) / (2.0 * eps);
        let denom = fd.abs().max(analytic[i].abs()).max(1e-8);
        max_rel = max_rel.max((fd - analytic[i]).abs() / denom);
    }
    max_rel
}
