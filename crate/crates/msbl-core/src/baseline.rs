//! Comparison policies: uniform, fixed macro action, oracle skyline, and a
//! tabular Q-learning baseline for the toy selection environment.

use alloc::vec;
use alloc::vec::Vec;

use crate::env::{EnvError, LowerPolicies, MultiScaleEnv, ToyEnv};
use crate::env::toy::{subset_from_index, HORIZON as TOY_HORIZON};
use crate::policy::{Policy, PolicyError};
use crate::rng::RngStream;

/// Uniform distribution over a fixed action set.
#[derive(Debug, Clone)]
pub struct UniformPolicy {
    action_count: usize,
}

impl UniformPolicy {
    pub fn new(action_count: usize) -> Self {
        assert!(action_count >= 1);
        Self { action_count }
    }
}

impl Policy for UniformPolicy {
    fn action_count(&self) -> usize {
        self.action_count
    }

    fn action_distribution(&self, _features: &[f64]) -> Result<Vec<f64>, PolicyError> {
        Ok(vec![1.0 / self.action_count as f64; self.action_count])
    }
}

/// Degenerate policy that always plays one action.
#[derive(Debug, Clone)]
pub struct FixedActionPolicy {
    action: usize,
    action_count: usize,
}

impl FixedActionPolicy {
    pub fn new(action: usize, action_count: usize) -> Result<Self, PolicyError> {
        if action >= action_count {
            return Err(PolicyError::MacroIndexOutOfRange {
                index: action,
                size: action_count,
            });
        }
        Ok(Self {
            action,
            action_count,
        })
    }
}

impl Policy for FixedActionPolicy {
    fn action_count(&self) -> usize {
        self.action_count
    }

    fn action_distribution(&self, _features: &[f64]) -> Result<Vec<f64>, PolicyError> {
        let mut probs = vec![0.0; self.action_count];
        probs[self.action] = 1.0;
        Ok(probs)
    }
}

/// Oracle skyline: the ground-truth best macro action per context group.
#[derive(Debug, Clone, PartialEq)]
pub struct SkylineReport {
    /// Best action per group id (ties broken by lowest action index).
    pub best_action: Vec<usize>,
    /// Conditional value of the best action per group.
    pub group_value: Vec<f64>,
    /// Group-probability-weighted overall value.
    pub overall_value: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BaselineError {
    #[error("level {0} is not enumerable and no Monte Carlo budget was given")]
    NotEnumerable(u32),
    #[error(transparent)]
    Env(#[from] EnvError),
}

/// Compute the skyline by exact enumeration when the level supports it,
/// otherwise by Monte Carlo with `mc_budget` rollouts per (group, action).
pub fn oracle_skyline(
    env: &dyn MultiScaleEnv,
    level: u32,
    groups: usize,
    lower: &LowerPolicies,
    mc_budget: usize,
    rng: &mut RngStream,
) -> Result<SkylineReport, BaselineError> {
    if let Some(view) = env.enumerable(level) {
        let mut best_action = vec![0usize; groups];
        let mut group_value = vec![f64::NEG_INFINITY; groups];
        let mut group_prob = vec![0.0f64; groups];
        for (ci, (prob, _)) in view.contexts.iter().enumerate() {
            let g = view.groups[ci] as usize;
            group_prob[g] += prob;
            let (mut best, mut best_v) = (0usize, f64::NEG_INFINITY);
            for (a, v) in view.mean_rewards[ci].iter().enumerate() {
                if *v > best_v {
                    best = a;
                    best_v = *v;
                }
            }
            best_action[g] = best;
            group_value[g] = best_v;
        }
        let overall_value = group_value
            .iter()
            .zip(group_prob.iter())
            .map(|(v, p)| v * p)
            .sum();
        return Ok(SkylineReport {
            best_action,
            group_value,
            overall_value,
        });
    }
    if mc_budget == 0 {
        return Err(BaselineError::NotEnumerable(level));
    }
    let action_count = env.macro_actions(level).len();
    // Estimate conditional means by stratified rollouts: draw contexts until
    // every group has `mc_budget` samples per action.
    let mut sums = vec![vec![0.0f64; action_count]; groups];
    let mut counts = vec![vec![0usize; action_count]; groups];
    let mut group_seen = vec![0usize; groups];
    let mut draws = 0usize;
    let max_draws = groups * action_count * mc_budget * 50;
    while counts
        .iter()
        .any(|row| row.iter().any(|c| *c < mc_budget))
        && draws < max_draws
    {
        draws += 1;
        let mut ep = rng.substream_indexed("skyline-episode", draws as u64);
        let ctx = env.sample_context(level, &mut ep);
        let g = ctx.group_id.unwrap_or(0) as usize;
        if g >= groups {
            continue;
        }
        group_seen[g] += 1;
        let action = {
            // Rotate through actions needing samples for this group.
            let mut pick = 0;
            let mut need = usize::MAX;
            for (a, c) in counts[g].iter().enumerate() {
                if *c < need {
                    need = *c;
                    pick = a;
                }
            }
            pick
        };
        let outcome = env.step(level, &ctx, Some(action), lower, &mut ep)?;
        sums[g][action] += outcome.reward;
        counts[g][action] += 1;
    }
    let mut best_action = vec![0usize; groups];
    let mut group_value = vec![0.0f64; groups];
    for g in 0..groups {
        let (mut best, mut best_v) = (0usize, f64::NEG_INFINITY);
        for a in 0..action_count {
            let v = if counts[g][a] > 0 {
                sums[g][a] / counts[g][a] as f64
            } else {
                f64::NEG_INFINITY
            };
            if v > best_v {
                best = a;
                best_v = v;
            }
        }
        best_action[g] = best;
        group_value[g] = best_v;
    }
    let total_seen: usize = group_seen.iter().sum();
    let overall_value = group_value
        .iter()
        .zip(group_seen.iter())
        .map(|(v, s)| v * *s as f64 / total_seen as f64)
        .sum();
    Ok(SkylineReport {
        best_action,
        group_value,
        overall_value,
    })
}

/// Tabular Q-values over states `(context, timestep)` and subset actions.
#[derive(Debug, Clone)]
pub struct QTable {
    /// q[context][timestep][action]
    q: Vec<Vec<Vec<f64>>>,
    pub alpha: f64,
    pub gamma: f64,
}

impl QTable {
    pub fn new(contexts: usize, horizon: usize, actions: usize, alpha: f64, gamma: f64) -> Self {
        Self {
            q: vec![vec![vec![0.0; actions]; horizon]; contexts],
            alpha,
            gamma,
        }
    }

    pub fn value(&self, context: usize, t: usize, action: usize) -> f64 {
        self.q[context][t][action]
    }

    pub fn greedy_action(&self, context: usize, t: usize) -> usize {
        let row = &self.q[context][t];
        let mut best = 0;
        for (a, v) in row.iter().enumerate() {
            if *v > row[best] {
                best = a;
            }
        }
        best
    }

    fn max_value(&self, context: usize, t: usize) -> f64 {
        self.q[context][t]
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    fn update(&mut self, context: usize, t: usize, action: usize, reward: f64, terminal: bool) {
        let bootstrap = if terminal {
            0.0
        } else {
            self.max_value(context, t + 1)
        };
        let q = &mut self.q[context][t][action];
        *q += self.alpha * (reward + self.gamma * bootstrap - *q);
    }
}

#[derive(Debug, Clone)]
pub struct QLearningConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Evaluate the greedy policy every this many episodes.
    pub eval_every: usize,
}

impl Default for QLearningConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            gamma: 1.0,
            epsilon_start: 0.1,
            epsilon_end: 0.01,
            eval_every: 100,
        }
    }
}

#[derive(Debug, Clone)]
pub struct QLearningResult {
    pub table: QTable,
    /// `(episodes_run, expected_terminal_reward_of_greedy_policy)` samples.
    pub curve: Vec<(usize, f64)>,
}

/// Exact expected terminal reward of the table's greedy policy, by
/// enumeration over the uniform context distribution (the greedy trajectory
/// is deterministic).
pub fn expected_greedy_value(env: &ToyEnv, table: &QTable) -> f64 {
    let contexts = crate::env::toy::CONTEXT_COUNT;
    let mut total = 0.0;
    for ctx in 0..contexts {
        let trajectory: Vec<Vec<usize>> = (0..TOY_HORIZON as usize)
            .map(|t| {
                subset_from_index(
                    crate::env::toy::N_ITEMS,
                    env.k(),
                    table.greedy_action(ctx, t) as u64,
                )
            })
            .collect();
        total += env.long_term_reward(&trajectory, ctx);
    }
    total / contexts as f64
}

/// One-step tabular Q-learning over episodes of the toy environment.
///
/// Intermediate rewards are zero; the terminal reward is the episode's
/// long-term reward. Exploration is epsilon-greedy with a linear decay over
/// the episode budget.
pub fn q_learning(
    env: &ToyEnv,
    episodes: usize,
    cfg: &QLearningConfig,
    rng: &mut RngStream,
) -> QLearningResult {
    let actions = crate::env::toy::binomial(crate::env::toy::N_ITEMS, env.k()) as usize;
    let contexts = crate::env::toy::CONTEXT_COUNT;
    let horizon = TOY_HORIZON as usize;
    let mut table = QTable::new(contexts, horizon, actions, cfg.alpha, cfg.gamma);
    let mut curve = Vec::new();
    for episode in 0..episodes {
        let epsilon = if episodes > 1 {
            cfg.epsilon_start
                + (cfg.epsilon_end - cfg.epsilon_start) * episode as f64 / (episodes - 1) as f64
        } else {
            cfg.epsilon_start
        };
        let ctx = rng.next_below(contexts);
        let mut trajectory: Vec<Vec<usize>> = Vec::with_capacity(horizon);
        let mut taken: Vec<usize> = Vec::with_capacity(horizon);
        for t in 0..horizon {
            let action = if rng.next_f64() < epsilon {
                rng.next_below(actions)
            } else {
                table.greedy_action(ctx, t)
            };
            taken.push(action);
            trajectory.push(subset_from_index(crate::env::toy::N_ITEMS, env.k(), action as u64));
        }
        let terminal_reward = env.long_term_reward(&trajectory, ctx);
        for t in (0..horizon).rev() {
            let reward = if t + 1 == horizon { terminal_reward } else { 0.0 };
            table.update(ctx, t, taken[t], reward, t + 1 == horizon);
        }
        if (episode + 1) % cfg.eval_every == 0 {
            curve.push((episode + 1, expected_greedy_value(env, &table)));
        }
    }
    QLearningResult { table, curve }
}

/// Outcome of the sample-efficiency comparison on the toy environment.
#[derive(Debug, Clone)]
pub struct SampleEfficiencyReport {
    pub k: usize,
    pub target_value: f64,
    /// Median Q-learning episodes to reach the target (per seed, censored
    /// seeds excluded).
    pub rl_episodes: usize,
    /// Median macro logged samples for the learned macro policy to reach the
    /// target.
    pub macro_samples: usize,
    pub ratio: f64,
    /// True when any seed failed to reach the target within its cap.
    pub censored: bool,
}

/// Q-learning episodes until the greedy policy first reaches `target`
/// (checked every `eval_every` episodes), or None within the cap.
pub fn rl_episodes_to_target(
    env: &ToyEnv,
    target: f64,
    cap: usize,
    cfg: &QLearningConfig,
    rng: &mut RngStream,
) -> Option<usize> {
    let result = q_learning(env, cap, cfg, rng);
    result
        .curve
        .iter()
        .find(|(_, v)| *v >= target)
        .map(|(e, _)| *e)
}

fn median(xs: &mut [usize]) -> usize {
    xs.sort_unstable();
    xs[xs.len() / 2]
}

/// Macro logged-sample counts to probe, increasing.
pub fn default_macro_sample_grid() -> Vec<usize> {
    vec![25, 50, 75, 100, 150, 200, 300, 400, 600, 800, 1200, 1600, 2400, 3200]
}

/// Smallest macro sample count whose trained macro policy (deployed
/// greedily) reaches `target` expected reward, by enumeration.
pub fn macro_samples_to_target(
    env: &ToyEnv,
    target: f64,
    grid: &[usize],
    opt: &crate::train::OptimizerConfig,
    rng: &mut RngStream,
) -> Option<usize> {
    use crate::msbl::collect_logged_data;
    use crate::net::NetworkSpec;
    use crate::train::{train_policy, TrainMode};

    let view = env.enumerable(2).expect("toy level 2 is enumerable");
    let boosts = env.macro_actions(2).len();
    for (gi, n) in grid.iter().enumerate() {
        let mut collect_rng = rng.substream_indexed("macro-collect", gi as u64);
        let logger = UniformPolicy::new(boosts);
        let data = collect_logged_data(env, 2, &logger, *n, &LowerPolicies::EMPTY, &mut collect_rng)
            .expect("collection on the toy env");
        let mut cfg = opt.clone();
        cfg.seed = rng.substream_indexed("macro-train-seed", gi as u64).next_u64();
        let trained = train_policy(
            &data,
            NetworkSpec::new(crate::env::toy::CONTEXT_COUNT, vec![], boosts),
            1.0,
            &cfg,
            &TrainMode::Plain,
        );
        let Ok(result) = trained else { continue };
        // Greedy deployment value by enumeration.
        let mut value = 0.0;
        for (ci, (prob, features)) in view.contexts.iter().enumerate() {
            let probs = result.policy.action_distribution(features).unwrap();
            let mut best = 0;
            for (a, p) in probs.iter().enumerate() {
                if *p > probs[best] {
                    best = a;
                }
            }
            value += prob * view.mean_rewards[ci][best];
        }
        if value >= target {
            return Some(*n);
        }
    }
    None
}

/// Median-over-seeds sample-efficiency ratio `n0 / n_L2` at a target value.
#[allow(clippy::too_many_arguments)]
pub fn sample_efficiency_ratio(
    env: &ToyEnv,
    target: f64,
    seeds: &[u64],
    rl_cap: usize,
    q_cfg: &QLearningConfig,
    opt: &crate::train::OptimizerConfig,
    grid: &[usize],
) -> SampleEfficiencyReport {
    let mut rl = Vec::new();
    let mut ms = Vec::new();
    let mut censored = false;
    for seed in seeds {
        let mut rl_rng = RngStream::new(*seed).substream("rl-baseline");
        match rl_episodes_to_target(env, target, rl_cap, q_cfg, &mut rl_rng) {
            Some(e) => rl.push(e),
            None => censored = true,
        }
        let mut msbl_rng = RngStream::new(*seed).substream("msbl-toy");
        match macro_samples_to_target(env, target, grid, opt, &mut msbl_rng) {
            Some(n) => ms.push(n),
            None => censored = true,
        }
    }
    let rl_episodes = if rl.is_empty() { rl_cap } else { median(&mut rl) };
    let macro_samples = if ms.is_empty() {
        *grid.last().unwrap_or(&1)
    } else {
        median(&mut ms)
    };
    SampleEfficiencyReport {
        k: env.k(),
        target_value: target,
        rl_episodes,
        macro_samples,
        ratio: rl_episodes as f64 / macro_samples as f64,
        censored,
    }
}
