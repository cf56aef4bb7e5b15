//! Two-level ranking environment: clicks now, retention later.
//!
//! Users belong to one of `g` groups, items to one of `g` groups, and each
//! user group has an unobserved preference for exactly one item group
//! (weight 0.9 versus 0.1 elsewhere). The builtin micro policy ranks items
//! by noisy per-(user group, item) base scores plus an optional group boost
//! and selects the top k; selected items click with probability equal to
//! their clean score. After 5 ranking steps the user's retention probability
//! is the preference-weighted fraction of selected items, the return day is
//! geometric in it, and the level-2 reward is the inverse return day.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::data::{ContextSample, LevelSpec};
use crate::policy::{MacroAction, MacroActionKind};
use crate::rng::RngStream;

use super::{binomial_count, EnvError, LowerPolicies, MultiScaleEnv, Outcome};

pub const HORIZON: u32 = 5;
pub const CONTEXT_DIM: usize = 5;

/// Retention probability floor so simulated return days stay bounded.
pub const RETENTION_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct RankEnvSpec {
    /// Number of user groups == number of item groups (2..=5 in the sweeps).
    pub groups: usize,
    /// Ranking size k (5..=40 in the sweeps).
    pub ranking_size: usize,
    /// Total item count.
    pub n_items: usize,
    /// Std deviation of the Gaussian score noise.
    pub score_noise: f64,
    /// Boost magnitude added to the targeted item group's scores.
    pub boost: f64,
    /// Preference weight of the preferred (user group, item group) pair.
    pub preferred_weight: f64,
    /// Preference weight of every other item group.
    pub other_weight: f64,
    /// Feature noise around the user-group means.
    pub sigma_f: f64,
    /// Seed of the construction stream that draws the base score table
    /// (shared across experiment seeds).
    pub construction_seed: u64,
}

impl Default for RankEnvSpec {
    fn default() -> Self {
        Self {
            groups: 2,
            ranking_size: 10,
            n_items: 50,
            score_noise: 0.0,
            boost: 0.5,
            preferred_weight: 0.9,
            other_weight: 0.1,
            sigma_f: 0.1,
            construction_seed: 0x5eed_c0de,
        }
    }
}

pub struct RankEnv {
    spec: RankEnvSpec,
    levels: Vec<LevelSpec>,
    macro_actions: Vec<MacroAction>,
    /// base_scores[user_group][item], drawn once from the construction stream.
    base_scores: Vec<Vec<f64>>,
    /// Per-user-group feature means.
    group_means: Vec<Vec<f64>>,
}

impl RankEnv {
    pub fn new(spec: RankEnvSpec) -> Self {
        assert!(spec.groups >= 2 && spec.groups <= spec.n_items);
        assert!(spec.ranking_size >= 1 && spec.ranking_size <= spec.n_items);
        let mut construction = RngStream::new(spec.construction_seed).substream("rank-env");
        let base_scores: Vec<Vec<f64>> = (0..spec.groups)
            .map(|_| {
                (0..spec.n_items)
                    .map(|_| 0.2 + 0.7 * construction.next_f64())
                    .collect()
            })
            .collect();
        let group_means: Vec<Vec<f64>> = (0..spec.groups)
            .map(|g| {
                (0..CONTEXT_DIM)
                    .map(|d| {
                        let angle = (g * CONTEXT_DIM + d) as f64;
                        2.0 * libm::cos(angle) + if d == g % CONTEXT_DIM { 2.0 } else { 0.0 }
                    })
                    .collect()
            })
            .collect();
        let macro_actions: Vec<MacroAction> = (0..spec.groups)
            .map(|j| {
                let targets: Vec<usize> =
                    (0..spec.n_items).filter(|i| i % spec.groups == j).collect();
                MacroAction::boost(j, spec.boost, targets)
            })
            .collect();
        let micro_actions = binomial_count(spec.n_items, spec.ranking_size);
        let levels = vec![
            LevelSpec::new(1, 1, micro_actions, CONTEXT_DIM),
            LevelSpec::new(2, HORIZON, spec.groups, CONTEXT_DIM),
        ];
        Self {
            spec,
            levels,
            macro_actions,
            base_scores,
            group_means,
        }
    }

    pub fn spec(&self) -> &RankEnvSpec {
        &self.spec
    }

    pub fn item_group(&self, item: usize) -> usize {
        item % self.spec.groups
    }

    pub fn preferred_item_group(&self, user_group: usize) -> usize {
        user_group
    }

    fn preference(&self, user_group: usize, item_group: usize) -> f64 {
        if self.preferred_item_group(user_group) == item_group {
            self.spec.preferred_weight
        } else {
            self.spec.other_weight
        }
    }

    /// One ranking step: top-k of boosted noisy scores, then Bernoulli
    /// clicks on the clean scores. Returns (selection, clicks).
    pub fn rank_step(
        &self,
        user_group: usize,
        boost: Option<usize>,
        rng: &mut RngStream,
    ) -> Result<(Vec<usize>, Vec<bool>), EnvError> {
        let clean = &self.base_scores[user_group];
        let mut noisy: Vec<f64> = clean.clone();
        if self.spec.score_noise > 0.0 {
            for s in noisy.iter_mut() {
                *s += self.spec.score_noise * rng.next_normal();
            }
        }
        if let Some(j) = boost {
            let action = self
                .macro_actions
                .get(j)
                .ok_or(EnvError::InvalidAction { level: 2, action: j })?;
            if let MacroActionKind::BoostMod { boost, target_set } = &action.kind {
                for t in target_set {
                    noisy[*t] += boost;
                }
            }
        }
        let mut idx: Vec<usize> = (0..self.spec.n_items).collect();
        idx.sort_by(|a, b| noisy[*b].partial_cmp(&noisy[*a]).unwrap());
        let mut selection: Vec<usize> = idx.into_iter().take(self.spec.ranking_size).collect();
        selection.sort_unstable();
        let clicks: Vec<bool> = selection
            .iter()
            .map(|i| rng.next_f64() < clean[*i].clamp(0.0, 1.0))
            .collect();
        Ok((selection, clicks))
    }

    /// Preference-weighted fraction of selected items, the retention
    /// probability, and the sampled level-2 reward (inverse return day).
    pub fn retention_reward(
        &self,
        selection_history: &[Vec<usize>],
        user_group: usize,
        rng: &mut RngStream,
    ) -> Result<(f64, f64), EnvError> {
        let mut group_counts = vec![0usize; self.spec.groups];
        let mut total = 0usize;
        for sel in selection_history {
            for item in sel {
                group_counts[self.item_group(*item)] += 1;
                total += 1;
            }
        }
        if total == 0 {
            return Err(EnvError::InvalidAction { level: 2, action: 0 });
        }
        let w: f64 = group_counts
            .iter()
            .enumerate()
            .map(|(g, c)| self.preference(user_group, g) * *c as f64 / total as f64)
            .sum();
        let p_r = w.clamp(RETENTION_FLOOR, 1.0);
        // Return day is geometric with success probability p_r.
        let day = if p_r >= 1.0 {
            1u64
        } else {
            let u = rng.next_f64().max(f64::MIN_POSITIVE);
            (libm::floor(libm::log(u) / libm::log(1.0 - p_r)) as u64).saturating_add(1)
        };
        Ok((p_r, 1.0 / day as f64))
    }

    fn user_features(&self, group: usize, rng: &mut RngStream) -> Vec<f64> {
        self.group_means[group]
            .iter()
            .map(|m| m + self.spec.sigma_f * rng.next_normal())
            .collect()
    }
}

impl MultiScaleEnv for RankEnv {
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
        let g = rng.next_below(self.spec.groups);
        ContextSample::with_group(level, self.user_features(g, rng), g as u32)
    }

    fn step(
        &self,
        level: u32,
        ctx: &ContextSample,
        action: Option<usize>,
        _lower: &LowerPolicies,
        rng: &mut RngStream,
    ) -> Result<Outcome, EnvError> {
        if level != 2 {
            return Err(EnvError::InvalidLevel(level));
        }
        if let Some(a) = action {
            if a >= self.spec.groups {
                return Err(EnvError::InvalidAction { level, action: a });
            }
        }
        let user_group = ctx.group_id.ok_or(EnvError::InvalidLevel(level))? as usize;
        let mut history = Vec::with_capacity(HORIZON as usize);
        let mut click_rates = Vec::with_capacity(HORIZON as usize);
        for _ in 0..HORIZON {
            let (selection, clicks) = self.rank_step(user_group, action, rng)?;
            let rate =
                clicks.iter().filter(|c| **c).count() as f64 / self.spec.ranking_size as f64;
            click_rates.push(rate);
            history.push(selection);
        }
        let (_, reward) = self.retention_reward(&history, user_group, rng)?;
        Ok(Outcome {
            reward,
            components: Vec::new(),
            lower_rewards: vec![click_rates],
        })
    }

    fn dump_tables(&self) -> Vec<(String, String)> {
        let mut scores = String::from("user_group,item,item_group,base_score,preference\n");
        for g in 0..self.spec.groups {
            for i in 0..self.spec.n_items {
                scores.push_str(&format!(
                    "{g},{i},{},{:.17e},{:.17e}\n",
                    self.item_group(i),
                    self.base_scores[g][i],
                    self.preference(g, self.item_group(i)),
                ));
            }
        }
        vec![(String::from("rank_scores.csv"), scores)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env() -> RankEnv {
        RankEnv::new(RankEnvSpec::default())
    }

    #[test]
    fn zero_noise_zero_boost_is_top_k_of_raw_scores() {
        let e = env();
        let mut rng = RngStream::new(3);
        let (sel, _) = e.rank_step(0, None, &mut rng).unwrap();
        let mut idx: Vec<usize> = (0..e.spec.n_items).collect();
        idx.sort_by(|a, b| e.base_scores[0][*b].partial_cmp(&e.base_scores[0][*a]).unwrap());
        let mut want: Vec<usize> = idx.into_iter().take(e.spec.ranking_size).collect();
        want.sort_unstable();
        assert_eq!(sel, want);
    }

    #[test]
    fn huge_boost_fills_selection_with_target_group() {
        let e = RankEnv::new(RankEnvSpec {
            boost: 100.0,
            ..RankEnvSpec::default()
        });
        let mut rng = RngStream::new(3);
        let (sel, _) = e.rank_step(0, Some(1), &mut rng).unwrap();
        assert!(sel.iter().all(|i| e.item_group(*i) == 1), "{sel:?}");
    }

    #[test]
    fn expected_clicks_match_score_sum_monte_carlo() {
        let e = env();
        let mut rng = RngStream::new(17);
        // Fixed selection: the unboosted top-k (deterministic at zero noise).
        let (sel, _) = e.rank_step(0, None, &mut rng).unwrap();
        let expected: f64 = sel.iter().map(|i| e.base_scores[0][*i]).sum();
        let n = 100_000usize;
        let mut total_clicks = 0usize;
        for _ in 0..n {
            let (s, clicks) = e.rank_step(0, None, &mut rng).unwrap();
            assert_eq!(s, sel);
            total_clicks += clicks.iter().filter(|c| **c).count();
        }
        let mean = total_clicks as f64 / n as f64;
        // Binomial-sum standard error.
        let var: f64 = sel
            .iter()
            .map(|i| {
                let p = e.base_scores[0][*i];
                p * (1.0 - p)
            })
            .sum();
        let se = (var / n as f64).sqrt();
        assert!(
            (mean - expected).abs() <= 3.0 * se,
            "mean {mean} vs expected {expected}"
        );
    }

    #[test]
    fn all_preferred_selection_gives_w_09() {
        let e = env();
        // All selected items from user group 0's preferred item group (0).
        let sel: Vec<usize> = (0..e.spec.n_items)
            .filter(|i| e.item_group(*i) == 0)
            .take(5)
            .collect();
        let history = vec![sel; HORIZON as usize];
        let mut rng = RngStream::new(5);
        let (w, _) = e.retention_reward(&history, 0, &mut rng).unwrap();
        assert!((w - 0.9).abs() < 1e-12);
    }

    #[test]
    fn mixed_selection_hand_arithmetic() {
        let e = env();
        // 3 preferred / 2 other per step: w = 0.9 * 0.6 + 0.1 * 0.4 = 0.58.
        let preferred: Vec<usize> = (0..e.spec.n_items)
            .filter(|i| e.item_group(*i) == 0)
            .take(3)
            .collect();
        let other: Vec<usize> = (0..e.spec.n_items)
            .filter(|i| e.item_group(*i) == 1)
            .take(2)
            .collect();
        let sel: Vec<usize> = preferred.into_iter().chain(other).collect();
        let history = vec![sel; HORIZON as usize];
        let mut rng = RngStream::new(5);
        let (w, _) = e.retention_reward(&history, 0, &mut rng).unwrap();
        assert!((w - 0.58).abs() < 1e-12, "w={w}");
    }

    #[test]
    fn certain_retention_returns_on_day_one() {
        let e = RankEnv::new(RankEnvSpec {
            preferred_weight: 1.0,
            ..RankEnvSpec::default()
        });
        let sel: Vec<usize> = (0..e.spec.n_items)
            .filter(|i| e.item_group(*i) == 0)
            .take(5)
            .collect();
        let history = vec![sel; HORIZON as usize];
        let mut rng = RngStream::new(5);
        let (p, r) = e.retention_reward(&history, 0, &mut rng).unwrap();
        assert_eq!(p, 1.0);
        assert_eq!(r, 1.0);
    }

    #[test]
    fn return_day_mean_matches_geometric_law() {
        let e = env();
        let sel: Vec<usize> = (0..10).collect();
        let history = vec![sel; HORIZON as usize];
        let mut rng = RngStream::new(11);
        // w for this balanced selection: half preferred, half other = 0.5.
        let n = 50_000;
        let mut sum_inv = 0.0;
        let mut w_seen = 0.0;
        for _ in 0..n {
            let (w, r) = e.retention_reward(&history, 0, &mut rng).unwrap();
            w_seen = w;
            sum_inv += r;
        }
        assert!((w_seen - 0.5).abs() < 1e-12);
        // E[1/day] for Geometric(p): -p ln(p) / (1 - p).
        let p: f64 = 0.5;
        let expected = -p * libm::log(p) / (1.0 - p);
        let mean = sum_inv / n as f64;
        assert!((mean - expected).abs() < 0.01, "mean {mean} vs {expected}");
    }

    #[test]
    fn retention_is_monotone_in_preferred_count() {
        let e = env();
        let mut rng = RngStream::new(1);
        let mut last = -1.0;
        for preferred_count in 0..=5usize {
            let pref: Vec<usize> = (0..e.spec.n_items)
                .filter(|i| e.item_group(*i) == 0)
                .take(preferred_count)
                .collect();
            let other: Vec<usize> = (0..e.spec.n_items)
                .filter(|i| e.item_group(*i) == 1)
                .take(5 - preferred_count)
                .collect();
            let sel: Vec<usize> = pref.into_iter().chain(other).collect();
            let history = vec![sel; HORIZON as usize];
            let (w, _) = e.retention_reward(&history, 0, &mut rng).unwrap();
            assert!(w > last);
            last = w;
        }
    }
}
