//! Three-level conversational recommender simulator.
//!
//! A micro bandit picks one of 10 "agents" per query; a synthetic token
//! generator produces a 20-token response from the chosen agent's model at
//! the decoding temperature selected one level up. The micro reward is the
//! inverse perplexity of the response under the *optimal* agent's model.
//! The level-2 reward is a steep sigmoid of a user-specific convex
//! combination of mean relevance and 3-gram diversity across the 10
//! responses of one level-2 step. Level 3 reweights a two-component version
//! of the level-2 feedback (plain, and capped at a threshold) and pays out
//! either mean medium-term reward or an activity indicator, depending on the
//! user's long-term group.
//!
//! Token models are first-order in the last token *pair*: each agent owns a
//! master cycle over the first 40 vocabulary tokens with distinct
//! consecutive pairs; rows put `p1` on the cycle successor, optionally `p2`
//! on a skip target, a small floor on every other cycle token, and the rest
//! on 10 reserved noise tokens that never appear on any cycle. Emitting a
//! reserved token inserts it into the stream and the walk then resumes where
//! it left off, so hot decoding adds novel 3-grams without destroying
//! coverage. Agent models come in two shapes: "sharp" rows lose per-token
//! log probability quickly when sampled hot (relevance collapses with
//! temperature), while "steady" rows keep relevance nearly flat and convert
//! temperature into extra 3-gram diversity. Greedy decoding is fully
//! deterministic, which pins the low-temperature rewards to exact
//! constants.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::data::{ContextSample, LevelSpec};
use crate::policy::MacroAction;
use crate::rng::RngStream;

use super::{micro_sample, EnvError, LowerPolicies, MultiScaleEnv, Outcome};

pub const VOCAB: usize = 50;
/// Cycle tokens; the remaining `VOCAB - CYCLE_TOKENS` ids are reserved noise
/// tokens that never appear on a master cycle.
pub const CYCLE_TOKENS: usize = 40;
/// Probability floor on off-model cycle tokens (keeps cross-model scoring
/// finite).
pub const PROB_FLOOR: f64 = 7e-4;
pub const RESPONSE_LEN: usize = 20;
pub const MICRO_HORIZON: usize = 10;
pub const L2_HORIZON: usize = 2;
pub const ACTION_COUNT: usize = 10;
pub const CONTEXT_DIM: usize = 5;
pub const TEMPERATURES: [f64; 6] = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0];

/// Cap of the thresholded feedback component.
pub const REWARD_THRESHOLD: f64 = 0.8;

/// Activity-indicator threshold: threshold-type users are active (reward 1)
/// when their mean medium-term reward stays at or below this level. Sits
/// strictly above the feedback cap so that capped-objective training can
/// strictly prefer stable sub-threshold behavior.
pub const ACTIVITY_THRESHOLD: f64 = 0.88;

/// Continuation probability inside a noise burst (rows led by a reserved
/// token), and the probability of extending the burst with another reserved
/// token.
pub const BURST_CONTINUE: f64 = 0.46;
pub const BURST_EXTEND: f64 = 0.50;

/// Scaled sigmoid parameters of the level-2 reward.
pub const SIGMOID_SCALE: f64 = 60.0;
pub const SIGMOID_SHIFT: f64 = 0.6;

#[derive(Debug, Clone, PartialEq)]
pub struct ConvEnvSpec {
    /// Feature noise around group means at every level.
    pub sigma_f: f64,
    /// Relevance-diversity tradeoff per level-2 user group.
    pub beta_u: [f64; 2],
    /// Medium-vs-activity tradeoff per level-3 user group.
    pub gamma_u: [f64; 2],
    /// P(level-2 group is the diversity group | level-3 group), per group.
    pub diversity_pairing: [f64; 2],
    /// Optimal agent per level-1 user group.
    pub optimal_actions: [usize; 2],
    /// Token-model construction constants.
    pub tokens: TokenModelParams,
    /// Construction stream seed (shared across experiment seeds).
    pub construction_seed: u64,
}

impl Default for ConvEnvSpec {
    fn default() -> Self {
        Self {
            sigma_f: 0.1,
            beta_u: [0.9, 0.1],
            gamma_u: [1.0, 0.0],
            diversity_pairing: [0.3, 0.7],
            optimal_actions: [2, 7],
            tokens: TokenModelParams::default(),
            construction_seed: 0x7_0ce4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenModelParams {
    /// Master cycle length of sharp-shape agents (0..=4).
    pub sharp_cycle: usize,
    /// Cycle-successor and skip probabilities of sharp rows.
    pub sharp_p1: f64,
    pub sharp_p2: f64,
    /// Master cycle length of steady-shape agents (5..=9).
    pub steady_cycle: usize,
    /// Cycle-successor and skip probabilities of steady rows.
    pub steady_p1: f64,
    pub steady_p2: f64,
}

impl Default for TokenModelParams {
    fn default() -> Self {
        Self {
            sharp_cycle: 40,
            sharp_p1: 0.71,
            sharp_p2: 0.20,
            steady_cycle: 108,
            steady_p1: 0.91,
            steady_p2: 0.0025,
        }
    }
}

/// One agent's autoregressive categorical token model.
///
/// Rows are keyed by the last token pair. On-cycle pairs emit the cycle
/// successor with probability `p1` and an optional skip target with `p2`;
/// the remaining mass is split between a floor on every other cycle token
/// and the reserved noise tokens. Off-cycle pairs resume the walk: if the
/// last token lies on the cycle the row continues from its first occurrence,
/// otherwise (a reserved token) from the occurrence of the token before it,
/// so a sampled noise token acts as an insertion rather than a teleport.
#[derive(Debug, Clone)]
pub struct TokenModel {
    cycle: Vec<u16>,
    /// Position of each on-cycle pair `(cycle[i], cycle[i+1]) -> i`.
    pair_pos: BTreeMap<(u16, u16), usize>,
    /// Re-entry anchor per token: a fixed (hash-picked) occurrence for cycle
    /// tokens, an arbitrary spread position for reserved tokens. Keeps
    /// off-cycle re-entries uniform over the cycle instead of clustering at
    /// first occurrences.
    anchor_pos: Vec<usize>,
    /// Per-position `(p1, p2)`; `p2 == 0` means no skip target.
    row_probs: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Copy)]
struct Row {
    next1: u16,
    p1: f64,
    next2: Option<u16>,
    p2: f64,
    /// Probability of each reserved noise token.
    reserved_each: f64,
    /// Probability of each remaining cycle-pool token.
    floor_each: f64,
}

impl TokenModel {
    fn build(
        cycle_len: usize,
        rng: &mut RngStream,
        probs_for_pos: impl Fn(usize) -> (f64, f64),
    ) -> Self {
        // Rejection-build a master cycle over the cycle-token pool whose
        // consecutive pairs (circular) are all distinct.
        'outer: loop {
            let mut cycle: Vec<u16> = Vec::with_capacity(cycle_len);
            let mut used: BTreeMap<(u16, u16), usize> = BTreeMap::new();
            cycle.push(rng.next_below(CYCLE_TOKENS) as u16);
            while cycle.len() < cycle_len {
                let prev = *cycle.last().unwrap();
                let mut placed = false;
                for _ in 0..4 * CYCLE_TOKENS {
                    let cand = rng.next_below(CYCLE_TOKENS) as u16;
                    if let alloc::collections::btree_map::Entry::Vacant(slot) =
                        used.entry((prev, cand))
                    {
                        slot.insert(cycle.len() - 1);
                        cycle.push(cand);
                        placed = true;
                        break;
                    }
                }
                if !placed {
                    continue 'outer;
                }
            }
            // Close the loop: the two wrap pairs must also be fresh.
            let wrap1 = (cycle[cycle_len - 1], cycle[0]);
            let wrap2 = (cycle[0], cycle[1]);
            if used.contains_key(&wrap1) || wrap1 == wrap2 {
                continue 'outer;
            }
            used.insert(wrap1, cycle_len - 1);

            let mut occurrences: Vec<Vec<usize>> = vec![Vec::new(); VOCAB];
            for (i, t) in cycle.iter().enumerate() {
                occurrences[*t as usize].push(i);
            }
            let anchor_pos: Vec<usize> = (0..VOCAB)
                .map(|t| {
                    // Cheap deterministic spread; independent of the rng so
                    // rows are a pure function of the cycle.
                    let h = (t as u64)
                        .wrapping_mul(0x9e37_79b9_7f4a_7c15)
                        .rotate_left(17);
                    match occurrences[t].as_slice() {
                        [] => (h % cycle_len as u64) as usize,
                        occ => occ[(h % occ.len() as u64) as usize],
                    }
                })
                .collect();
            let row_probs: Vec<(f64, f64)> = (0..cycle_len).map(&probs_for_pos).collect();
            return Self {
                cycle,
                pair_pos: used,
                anchor_pos,
                row_probs,
            };
        }
    }

    fn len(&self) -> usize {
        self.cycle.len()
    }

    fn token_at(&self, pos: usize) -> u16 {
        self.cycle[pos % self.len()]
    }

    /// Canonical start pair: generation begins at cycle position 0.
    pub fn start_pair(&self) -> (u16, u16) {
        (self.token_at(self.len() - 2), self.token_at(self.len() - 1))
    }

    /// Resolve the row for an arbitrary observed pair.
    fn row(&self, pair: (u16, u16)) -> Row {
        if (pair.1 as usize) >= CYCLE_TOKENS {
            // Inside a noise burst: continue the interrupted walk with
            // probability BURST_CONTINUE, extend the burst with another
            // reserved token with BURST_EXTEND, floor elsewhere.
            let anchor = self.anchor_pos[pair.0 as usize];
            let pos = (anchor + self.len() - 1) % self.len();
            let reserved = (VOCAB - CYCLE_TOKENS) as f64;
            let floor_count = (CYCLE_TOKENS - 1) as f64;
            let floor_each =
                (1.0 - BURST_CONTINUE - BURST_EXTEND).max(0.0) / floor_count;
            return Row {
                next1: self.token_at(pos + 2),
                p1: BURST_CONTINUE,
                next2: None,
                p2: 0.0,
                reserved_each: BURST_EXTEND / reserved,
                floor_each,
            };
        }
        let pos = match self.pair_pos.get(&pair) {
            Some(i) => *i,
            None => {
                // Off-cycle: re-enter at the emitted token's anchor
                // occurrence (re-entry points are spread over the cycle).
                let anchor = self.anchor_pos[pair.1 as usize];
                (anchor + self.len() - 1) % self.len()
            }
        };
        let (p1, p2) = self.row_probs[pos];
        let next1 = self.token_at(pos + 2);
        let next2 = if p2 > 0.0 {
            let target = self.token_at(pos + 3);
            // A skip target colliding with the successor would break strict
            // greedy ordering; nudge it one position further.
            if target == next1 {
                Some(self.token_at(pos + 4))
            } else {
                Some(target)
            }
        } else {
            None
        };
        let named = 1 + usize::from(next2.is_some());
        let reserved = VOCAB - CYCLE_TOKENS;
        let floor_count = CYCLE_TOKENS - named;
        let junk_total = (1.0 - p1 - p2).max(0.0);
        let floor_total = PROB_FLOOR * floor_count as f64;
        let reserved_each = ((junk_total - floor_total) / reserved as f64).max(PROB_FLOOR / 10.0);
        Row {
            next1,
            p1,
            next2,
            p2,
            reserved_each,
            floor_each: PROB_FLOOR,
        }
    }

    /// Model probability of `token` following `pair`.
    pub fn prob(&self, pair: (u16, u16), token: u16) -> f64 {
        let row = self.row(pair);
        if token == row.next1 {
            row.p1
        } else if Some(token) == row.next2 {
            row.p2
        } else if (token as usize) >= CYCLE_TOKENS {
            row.reserved_each
        } else {
            row.floor_each
        }
    }

    /// Sample the next token at decoding temperature `tau` (0 = greedy).
    pub fn sample(&self, pair: (u16, u16), tau: f64, rng: &mut RngStream) -> u16 {
        let row = self.row(pair);
        if tau <= 0.0 {
            return row.next1;
        }
        let inv = 1.0 / tau.max(crate::policy::TEMPERATURE_FLOOR);
        // Tempered weights relative to p1 for numerical stability.
        let temper = |p: f64| libm::exp(inv * libm::log(p / row.p1));
        let named = 1 + usize::from(row.next2.is_some());
        let reserved = (VOCAB - CYCLE_TOKENS) as f64;
        let floor_count = (CYCLE_TOKENS - named) as f64;
        let w1 = 1.0;
        let w2 = if row.next2.is_some() { temper(row.p2) } else { 0.0 };
        let wr = temper(row.reserved_each);
        let wf = temper(row.floor_each);
        let total = w1 + w2 + wr * reserved + wf * floor_count;
        let mut u = rng.next_f64() * total;
        if u < w1 {
            return row.next1;
        }
        u -= w1;
        if let Some(t2) = row.next2 {
            if u < w2 {
                return t2;
            }
            u -= w2;
        }
        if u < wr * reserved {
            let idx = ((u / wr) as usize).min(VOCAB - CYCLE_TOKENS - 1);
            return (CYCLE_TOKENS + idx) as u16;
        }
        u -= wr * reserved;
        // Floor: uniform over the remaining cycle-pool tokens, deterministic
        // order.
        let mut idx = if wf > 0.0 { (u / wf) as usize } else { 0 };
        for t in 0..CYCLE_TOKENS as u16 {
            if t == row.next1 || Some(t) == row.next2 {
                continue;
            }
            if idx == 0 {
                return t;
            }
            idx -= 1;
        }
        row.next1
    }
}

/// Generate a response of `RESPONSE_LEN` tokens autoregressively.
pub fn generate_response(
    model: &TokenModel,
    tau: f64,
    start_pair: (u16, u16),
    rng: &mut RngStream,
) -> Vec<u16> {
    let mut pair = start_pair;
    let mut out = Vec::with_capacity(RESPONSE_LEN);
    for _ in 0..RESPONSE_LEN {
        let t = model.sample(pair, tau, rng);
        out.push(t);
        pair = (pair.1, t);
    }
    out
}

/// Inverse perplexity of a response under a reference model: the geometric
/// mean of its token probabilities.
pub fn inverse_perplexity(tokens: &[u16], start_pair: (u16, u16), reference: &TokenModel) -> f64 {
    assert!(!tokens.is_empty(), "cannot score an empty response");
    let mut pair = start_pair;
    let mut log_sum = 0.0;
    for t in tokens {
        log_sum += libm::log(reference.prob(pair, *t));
        pair = (pair.1, *t);
    }
    libm::exp(log_sum / tokens.len() as f64)
}

/// Normalized 3-gram novelty across a set of responses: one minus the
/// fraction of 3-gram occurrences whose 3-gram appeared earlier. Windows are
/// taken within each response; occurrences are pooled across responses in
/// order. Responses too short for any 3-gram yield 1.0 (no repeats
/// observable).
pub fn diversity_score(responses: &[Vec<u16>]) -> f64 {
    let mut seen: alloc::collections::BTreeSet<(u16, u16, u16)> = alloc::collections::BTreeSet::new();
    let mut total = 0usize;
    let mut repeats = 0usize;
    for response in responses {
        for w in response.windows(3) {
            total += 1;
            if !seen.insert((w[0], w[1], w[2])) {
                repeats += 1;
            }
        }
    }
    if total == 0 {
        return 1.0;
    }
    1.0 - repeats as f64 / total as f64
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + libm::exp(-x))
}

/// Level-2 reward: steep sigmoid of the convex combination of mean micro
/// reward and diversity.
pub fn level2_reward(mean_r1: f64, diversity: f64, beta_u: f64) -> f64 {
    let combo = beta_u * mean_r1 + (1.0 - beta_u) * diversity;
    logistic(SIGMOID_SCALE * (combo - SIGMOID_SHIFT))
}

/// Feedback components reweighted by a level-3 macro action.
pub fn parameterized_feedback(r2: f64, weights: &[f64]) -> f64 {
    let components = [r2, r2.min(REWARD_THRESHOLD)];
    weights
        .iter()
        .zip(components.iter())
        .map(|(w, c)| w * c)
        .sum()
}

/// Level-3 reward: engaged users earn the mean medium-term reward; threshold
/// users earn an activity indicator (mean medium-term reward at or below
/// [`ACTIVITY_THRESHOLD`]).
pub fn level3_reward(r2_pair: &[f64], gamma_u: f64) -> f64 {
    let mean = r2_pair.iter().sum::<f64>() / r2_pair.len() as f64;
    let indicator = if mean <= ACTIVITY_THRESHOLD { 1.0 } else { 0.0 };
    gamma_u * mean + (1.0 - gamma_u) * indicator
}

pub struct ConvEnv {
    spec: ConvEnvSpec,
    levels: Vec<LevelSpec>,
    l2_actions: Vec<MacroAction>,
    l3_actions: Vec<MacroAction>,
    models: Vec<TokenModel>,
    /// Group feature means per level (levels bottom-up, 2 groups each).
    group_means: [[Vec<f64>; 2]; 3],
}

impl ConvEnv {
    pub fn new(spec: ConvEnvSpec) -> Self {
        let construction = RngStream::new(spec.construction_seed).substream("conv-env");
        let t = &spec.tokens;
        let models: Vec<TokenModel> = (0..ACTION_COUNT)
            .map(|m| {
                let mut model_rng = construction.substream_indexed("token-model", m as u64);
                if m < ACTION_COUNT / 2 {
                    TokenModel::build(t.sharp_cycle, &mut model_rng, |_| (t.sharp_p1, t.sharp_p2))
                } else {
                    TokenModel::build(t.steady_cycle, &mut model_rng, |_| (t.steady_p1, t.steady_p2))
                }
            })
            .collect();
        // Distinct greedy openings per agent.
        debug_assert!({
            let mut rng = RngStream::new(0);
            let outputs: Vec<Vec<u16>> = models
                .iter()
                .map(|m| generate_response(m, 0.0, m.start_pair(), &mut rng))
                .collect();
            (0..outputs.len()).all(|i| (0..i).all(|j| outputs[i] != outputs[j]))
        });

        let group_means = [
            [vec![1.5; CONTEXT_DIM], vec![-1.5; CONTEXT_DIM]],
            [
                vec![1.5, 1.5, -1.5, 1.5, -1.5],
                vec![-1.5, -1.5, 1.5, -1.5, 1.5],
            ],
            [
                vec![1.5, -1.5, 1.5, -1.5, 1.5],
                vec![-1.5, 1.5, -1.5, 1.5, -1.5],
            ],
        ];

        let l2_actions: Vec<MacroAction> = TEMPERATURES
            .iter()
            .enumerate()
            .map(|(i, tau)| MacroAction::temperature(i, *tau))
            .collect();
        let l3_actions = vec![
            MacroAction::weights(0, vec![0.0, 1.0]),
            MacroAction::weights(1, vec![1.0, 0.0]),
        ];
        let levels = vec![
            LevelSpec::new(1, 1, ACTION_COUNT, CONTEXT_DIM),
            LevelSpec::new(2, MICRO_HORIZON as u32, TEMPERATURES.len(), CONTEXT_DIM),
            LevelSpec::new(3, L2_HORIZON as u32, l3_actions.len(), CONTEXT_DIM),
        ];
        Self {
            spec,
            levels,
            l2_actions,
            l3_actions,
            models,
            group_means,
        }
    }

    pub fn spec(&self) -> &ConvEnvSpec {
        &self.spec
    }

    pub fn model(&self, action: usize) -> &TokenModel {
        &self.models[action]
    }

    pub fn optimal_action(&self, micro_group: usize) -> usize {
        self.spec.optimal_actions[micro_group]
    }

    pub fn temperature_value(&self, index: Option<usize>) -> f64 {
        match index {
            Some(i) => TEMPERATURES[i],
            None => 1.0,
        }
    }

    fn features(&self, level: u32, group: usize, rng: &mut RngStream) -> Vec<f64> {
        self.group_means[level as usize - 1][group]
            .iter()
            .map(|m| m + self.spec.sigma_f * rng.next_normal())
            .collect()
    }

    /// Execute the 10 micro steps of one level-2 interaction.
    ///
    /// Responses are chained: each starts from the last token pair of the
    /// previous one, so greedy decoding walks the agent's master cycle
    /// deterministically across the whole step.
    fn run_level2(
        &self,
        group2: usize,
        temperature_index: Option<usize>,
        lower: &LowerPolicies,
        rng: &mut RngStream,
    ) -> Result<(f64, Vec<f64>, Vec<f64>), EnvError> {
        let family = lower
            .micro_family
            .ok_or(EnvError::MissingLowerFamily { level: 2 })?;
        let tau = self.temperature_value(temperature_index);
        let micro_group = group2; // micro group follows the level-2 group
        let optimal = &self.models[self.optimal_action(micro_group)];
        let mut responses: Vec<Vec<u16>> = Vec::with_capacity(MICRO_HORIZON);
        let mut r1s = Vec::with_capacity(MICRO_HORIZON);
        let mut pair: Option<(u16, u16)> = None;
        for _ in 0..MICRO_HORIZON {
            let features = self.features(1, micro_group, rng);
            let (action, _) = micro_sample(Some(family), temperature_index, &features, rng)?
                .expect("family present");
            let model = &self.models[action];
            let start = pair.unwrap_or_else(|| model.start_pair());
            let tokens = generate_response(model, tau, start, rng);
            r1s.push(inverse_perplexity(&tokens, start, optimal));
            pair = Some((tokens[RESPONSE_LEN - 2], tokens[RESPONSE_LEN - 1]));
            responses.push(tokens);
        }
        let mean_r1 = r1s.iter().sum::<f64>() / r1s.len() as f64;
        let diversity = diversity_score(&responses);
        let r2 = level2_reward(mean_r1, diversity, self.spec.beta_u[group2]);
        Ok((r2, vec![r2, r2.min(REWARD_THRESHOLD)], r1s))
    }
}

impl MultiScaleEnv for ConvEnv {
    fn levels(&self) -> &[LevelSpec] {
        &self.levels
    }

    fn macro_actions(&self, level: u32) -> &[MacroAction] {
        match level {
            2 => &self.l2_actions,
            3 => &self.l3_actions,
            _ => &[],
        }
    }

    fn sample_context(&self, level: u32, rng: &mut RngStream) -> ContextSample {
        let group = rng.next_below(2);
        ContextSample::with_group(level, self.features(level, group, rng), group as u32)
    }

    fn step(
        &self,
        level: u32,
        ctx: &ContextSample,
        action: Option<usize>,
        lower: &LowerPolicies,
        rng: &mut RngStream,
    ) -> Result<Outcome, EnvError> {
        let group = ctx.group_id.ok_or(EnvError::InvalidLevel(level))? as usize;
        match level {
            1 => {
                let a = action.ok_or(EnvError::MissingDecider { level })?;
                if a >= ACTION_COUNT {
                    return Err(EnvError::InvalidAction { level, action: a });
                }
                let model = &self.models[a];
                let start = model.start_pair();
                let tokens = generate_response(model, 1.0, start, rng);
                let optimal = &self.models[self.optimal_action(group)];
                Ok(Outcome::scalar(inverse_perplexity(&tokens, start, optimal)))
            }
            2 => {
                if let Some(a) = action {
                    if a >= TEMPERATURES.len() {
                        return Err(EnvError::InvalidAction { level, action: a });
                    }
                }
                let (r2, components, r1s) = self.run_level2(group, action, lower, rng)?;
                Ok(Outcome {
                    reward: r2,
                    components,
                    lower_rewards: vec![r1s],
                })
            }
            3 => {
                let enclosing = match action {
                    Some(a) => Some(
                        self.l3_actions
                            .get(a)
                            .ok_or(EnvError::InvalidAction { level, action: a })?,
                    ),
                    None => None,
                };
                let gamma = self.spec.gamma_u[group];
                let p_diverse = self.spec.diversity_pairing[group];
                let mut r2s = Vec::with_capacity(L2_HORIZON);
                let mut all_r1 = Vec::new();
                for _ in 0..L2_HORIZON {
                    let group2 = usize::from(rng.next_f64() < p_diverse);
                    let ctx2 =
                        ContextSample::with_group(2, self.features(2, group2, rng), group2 as u32);
                    let temperature_index = match lower.decider_for(2) {
                        Some(decider) => decider.decide(
                            2,
                            &ctx2,
                            TEMPERATURES.len(),
                            enclosing,
                            rng,
                        )?,
                        None => None,
                    };
                    let (r2, _, r1s) = self.run_level2(group2, temperature_index, lower, rng)?;
                    r2s.push(r2);
                    all_r1.extend(r1s);
                }
                let reward = level3_reward(&r2s, gamma);
                Ok(Outcome {
                    reward,
                    components: Vec::new(),
                    lower_rewards: vec![all_r1, r2s],
                })
            }
            other => Err(EnvError::InvalidLevel(other)),
        }
    }

    fn dump_tables(&self) -> Vec<(String, String)> {
        let mut cycles = String::from("agent,shape,position,token,p1,p2\n");
        for (m, model) in self.models.iter().enumerate() {
            let shape = if m < ACTION_COUNT / 2 { "sharp" } else { "steady" };
            for pos in 0..model.len() {
                let (p1, p2) = model.row_probs[pos];
                cycles.push_str(&format!(
                    "{m},{shape},{pos},{},{:.17e},{:.17e}\n",
                    model.cycle[pos], p1, p2,
                ));
            }
        }
        let mut groups = String::from("level,group,dim,mean\n");
        for (li, level) in self.group_means.iter().enumerate() {
            for (g, mean) in level.iter().enumerate() {
                for (d, m) in mean.iter().enumerate() {
                    groups.push_str(&format!("{},{g},{d},{:.17e}\n", li + 1, m));
                }
            }
        }
        let mut params = String::from("key,value\n");
        params.push_str(&format!("sigma_f,{:.17e}\n", self.spec.sigma_f));
        params.push_str(&format!("beta_u_0,{:.17e}\n", self.spec.beta_u[0]));
        params.push_str(&format!("beta_u_1,{:.17e}\n", self.spec.beta_u[1]));
        params.push_str(&format!("gamma_u_0,{:.17e}\n", self.spec.gamma_u[0]));
        params.push_str(&format!("gamma_u_1,{:.17e}\n", self.spec.gamma_u[1]));
        params.push_str(&format!(
            "diversity_pairing_0,{:.17e}\n",
            self.spec.diversity_pairing[0]
        ));
        params.push_str(&format!(
            "diversity_pairing_1,{:.17e}\n",
            self.spec.diversity_pairing[1]
        ));
        vec![
            (String::from("conv_token_models.csv"), cycles),
            (String::from("conv_group_means.csv"), groups),
            (String::from("conv_params.csv"), params),
        ]
    }
}
