//! Toy k-of-n selection environment with a sparse terminal reward.
//!
//! Two user contexts select `k` of 10 items for 5 steps based on a static
//! relevance table. Each context has one preferred item whose relevance
//! ranks just outside the unboosted top-k; the long-term reward is the
//! fraction of steps in which the preferred item was selected. The macro
//! action set holds 8 group-targeted boosts with evenly spaced magnitudes
//! `0.0..=0.7`, alternating between the two item groups, constructed so that
//! exactly one boost level achieves reward 1.0 per context while the others
//! are reward-neutral. The myopic top-k policy (zero boost) never selects
//! the preferred item, so short-term optimal behavior is long-term
//! suboptimal by construction.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::data::{ContextSample, LevelSpec};
use crate::policy::MacroAction;
use crate::rng::RngStream;

use super::{EnumerableLevel, EnvError, LowerPolicies, MultiScaleEnv, Outcome};

pub const N_ITEMS: usize = 10;
pub const CONTEXT_COUNT: usize = 2;
pub const HORIZON: u32 = 5;
pub const BOOST_COUNT: usize = 8;

/// Binomial coefficient with u128 intermediates.
pub fn binomial(n: usize, k: usize) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc as u64
}

/// The `index`-th k-subset of `0..n` in lexicographic order.
pub fn subset_from_index(n: usize, k: usize, mut index: u64) -> Vec<usize> {
    let mut subset = Vec::with_capacity(k);
    let mut start = 0;
    let mut remaining = k;
    while remaining > 0 {
        for item in start..n {
            let tail = binomial(n - item - 1, remaining - 1);
            if index < tail {
                subset.push(item);
                start = item + 1;
                remaining -= 1;
                break;
            }
            index -= tail;
        }
    }
    subset
}

/// Lexicographic index of a sorted k-subset of `0..n`.
pub fn index_from_subset(n: usize, subset: &[usize]) -> u64 {
    let k = subset.len();
    let mut index = 0u64;
    let mut prev = 0usize;
    for (pos, &item) in subset.iter().enumerate() {
        for skipped in prev..item {
            index += binomial(n - skipped - 1, k - pos - 1);
        }
        prev = item + 1;
    }
    index
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyEnvSpec {
    /// Items selected per step; 2, 4 or 6 in the standard sweeps.
    pub k: usize,
    /// Relevance deficit of each context's preferred item to its entry
    /// margin; exactly one boost magnitude clears it.
    pub gaps: [f64; CONTEXT_COUNT],
    /// Fixed boost magnitude ladder step.
    pub boost_step: f64,
}

impl Default for ToyEnvSpec {
    fn default() -> Self {
        Self {
            k: 2,
            gaps: [0.52, 0.62],
            boost_step: 0.1,
        }
    }
}

pub struct ToyEnv {
    spec: ToyEnvSpec,
    levels: Vec<LevelSpec>,
    macro_actions: Vec<MacroAction>,
    /// relevance[context][item]
    relevance: [[f64; N_ITEMS]; CONTEXT_COUNT],
    preferred: [usize; CONTEXT_COUNT],
}

impl ToyEnv {
    pub fn new(spec: ToyEnvSpec) -> Self {
        assert!(
            spec.k >= 2 && spec.k <= 6 && spec.k % 2 == 0,
            "supported selection sizes are 2, 4, 6"
        );
        // High non-preferred items of the opposite group.
        let high = [0.90, 0.86, 0.82, 0.78, 0.74];
        // Preferred item must beat `high[k-2]` (one in-group decoy sits above
        // it and occupies a slot at any boost level).
        let margin = high[spec.k - 2];
        let preferred = [0usize, 5usize];
        let mut relevance = [[0.0; N_ITEMS]; CONTEXT_COUNT];
        for ctx in 0..CONTEXT_COUNT {
            let v_pref = margin - spec.gaps[ctx];
            assert!(v_pref > 0.10, "preferred relevance must clear the low decoys");
            let own = preferred[ctx]; // own group starts here
            let other = (own + 5) % N_ITEMS;
            relevance[ctx][own] = v_pref;
            relevance[ctx][own + 1] = 0.70; // in-group high decoy
            relevance[ctx][own + 2] = 0.10;
            relevance[ctx][own + 3] = 0.08;
            relevance[ctx][own + 4] = 0.06;
            for (j, h) in high.iter().enumerate() {
                relevance[ctx][other + j] = *h;
            }
        }
        let macro_actions = (0..BOOST_COUNT)
            .map(|j| {
                let group = j % 2;
                let targets: Vec<usize> = (0..N_ITEMS).filter(|i| i / 5 == group).collect();
                MacroAction::boost(j, spec.boost_step * j as f64, targets)
            })
            .collect();
        let levels = vec![
            LevelSpec::new(1, 1, binomial(N_ITEMS, spec.k) as usize, CONTEXT_COUNT),
            LevelSpec::new(2, HORIZON, BOOST_COUNT, CONTEXT_COUNT),
        ];
        let env = Self {
            spec,
            levels,
            macro_actions,
            relevance,
            preferred,
        };
        // Degenerate ladders (zero step) are allowed for symmetry tests; the
        // standard construction must have exactly one winning boost.
        debug_assert!(env.spec.boost_step == 0.0 || env.exactly_one_boost_per_context());
        env
    }

    pub fn k(&self) -> usize {
        self.spec.k
    }

    pub fn preferred_item(&self, context: usize) -> usize {
        self.preferred[context]
    }

    pub fn relevance(&self, context: usize) -> &[f64; N_ITEMS] {
        &self.relevance[context]
    }

    pub fn context_features(context: usize) -> Vec<f64> {
        let mut f = vec![0.0; CONTEXT_COUNT];
        f[context] = 1.0;
        f
    }

    /// Boosted relevance vector under a macro action (None = no boost).
    fn boosted_relevance(&self, context: usize, boost: Option<usize>) -> [f64; N_ITEMS] {
        let mut rel = self.relevance[context];
        if let Some(j) = boost {
            if let crate::policy::MacroActionKind::BoostMod { boost, target_set } =
                &self.macro_actions[j].kind
            {
                for t in target_set {
                    rel[*t] += boost;
                }
            }
        }
        rel
    }

    /// Builtin micro policy: top-k of boosted relevance, ties by lowest index.
    pub fn top_k_selection(&self, context: usize, boost: Option<usize>) -> Vec<usize> {
        let rel = self.boosted_relevance(context, boost);
        let mut idx: Vec<usize> = (0..N_ITEMS).collect();
        // Stable sort keeps the lowest index first among ties.
        idx.sort_by(|a, b| rel[*b].partial_cmp(&rel[*a]).unwrap());
        let mut sel: Vec<usize> = idx.into_iter().take(self.spec.k).collect();
        sel.sort_unstable();
        sel
    }

    /// Long-term reward of a trajectory of selections for a context: the
    /// fraction of steps in which the preferred item was selected.
    pub fn long_term_reward(&self, trajectory: &[Vec<usize>], context: usize) -> f64 {
        assert_eq!(
            trajectory.len(),
            HORIZON as usize,
            "trajectory must cover the full horizon"
        );
        let pref = self.preferred[context];
        let hits = trajectory
            .iter()
            .filter(|sel| sel.contains(&pref))
            .count();
        hits as f64 / HORIZON as f64
    }

    /// Deterministic episode reward of the builtin policy under a boost.
    pub fn builtin_episode_reward(&self, context: usize, boost: Option<usize>) -> f64 {
        let sel = self.top_k_selection(context, boost);
        let trajectory: Vec<Vec<usize>> = (0..HORIZON).map(|_| sel.clone()).collect();
        self.long_term_reward(&trajectory, context)
    }

    fn exactly_one_boost_per_context(&self) -> bool {
        (0..CONTEXT_COUNT).all(|ctx| {
            let winners = (0..BOOST_COUNT)
                .filter(|j| self.builtin_episode_reward(ctx, Some(*j)) == 1.0)
                .count();
            let base = self.builtin_episode_reward(ctx, None);
            winners == 1 && base == 0.0
        })
    }
}

impl MultiScaleEnv for ToyEnv {
    fn levels(&self) -> &[LevelSpec] {
        &self.levels
    }

    fn macro_actions(&self, level: u32) -> &[MacroAction] {
        if level == 2 {
            &self.macro_actions
        } else {
            &[]
        }
    }

    fn sample_context(&self, level: u32, rng: &mut RngStream) -> ContextSample {
        let ctx = rng.next_below(CONTEXT_COUNT);
        ContextSample::with_group(level, Self::context_features(ctx), ctx as u32)
    }

    fn step(
        &self,
        level: u32,
        ctx: &ContextSample,
        action: Option<usize>,
        _lower: &LowerPolicies,
        _rng: &mut RngStream,
    ) -> Result<Outcome, EnvError> {
        let context = ctx.group_id.ok_or(EnvError::InvalidLevel(level))? as usize;
        match level {
            1 => {
                // Micro interactions carry no intermediate reward; the signal
                // is terminal at level 2.
                let a = action.ok_or(EnvError::MissingDecider { level })?;
                if a >= self.levels[0].action_count {
                    return Err(EnvError::InvalidAction { level, action: a });
                }
                Ok(Outcome::scalar(0.0))
            }
            2 => {
                if let Some(a) = action {
                    if a >= BOOST_COUNT {
                        return Err(EnvError::InvalidAction { level, action: a });
                    }
                }
                let reward = self.builtin_episode_reward(context, action);
                Ok(Outcome {
                    reward,
                    components: Vec::new(),
                    lower_rewards: vec![vec![0.0; HORIZON as usize]],
                })
            }
            other => Err(EnvError::InvalidLevel(other)),
        }
    }

    fn enumerable(&self, level: u32) -> Option<EnumerableLevel> {
        if level != 2 {
            return None;
        }
        let contexts: Vec<(f64, Vec<f64>)> = (0..CONTEXT_COUNT)
            .map(|c| (1.0 / CONTEXT_COUNT as f64, Self::context_features(c)))
            .collect();
        let groups: Vec<u32> = (0..CONTEXT_COUNT as u32).collect();
        let mean_rewards: Vec<Vec<f64>> = (0..CONTEXT_COUNT)
            .map(|c| {
                (0..BOOST_COUNT)
                    .map(|j| self.builtin_episode_reward(c, Some(j)))
                    .collect()
            })
            .collect();
        Some(EnumerableLevel {
            contexts,
            groups,
            mean_rewards,
        })
    }

    fn dump_tables(&self) -> Vec<(String, String)> {
        let mut rel = String::from("context,item,relevance,preferred\n");
        for c in 0..CONTEXT_COUNT {
            for i in 0..N_ITEMS {
                rel.push_str(&format!(
                    "{c},{i},{:.17e},{}\n",
                    self.relevance[c][i],
                    (self.preferred[c] == i) as u8
                ));
            }
        }
        let mut boosts = String::from("action,magnitude,target_group\n");
        for j in 0..BOOST_COUNT {
            boosts.push_str(&format!(
                "{j},{:.17e},{}\n",
                self.spec.boost_step * j as f64,
                j % 2
            ));
        }
        vec![
            (String::from("toy_relevance.csv"), rel),
            (String::from("toy_boosts.csv"), boosts),
        ]
    }
}
