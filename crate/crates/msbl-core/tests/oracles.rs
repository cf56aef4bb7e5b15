//! Cross-module oracle checks: ground-truth enumeration against Monte
//! Carlo, and skyline structure on the conversational simulator.

use msbl_core::baseline::{oracle_skyline, UniformPolicy};
use msbl_core::env::conv::{ConvEnv, ConvEnvSpec};
use msbl_core::env::toy::{ToyEnv, ToyEnvSpec};
use msbl_core::env::{LowerPolicies, MultiScaleEnv};
use msbl_core::estimator::{brute_force_value, BruteForceMode};
use msbl_core::msbl::{
    collect_logged_data, learn_micro_family, LevelConfig, LevelMode,
};
use msbl_core::rng::RngStream;
use msbl_core::train::OptimizerConfig;

/// A single identity temperature yields a family of one whose member equals
/// the plain trained policy.
#[test]
fn identity_policy_modification_family_equals_base() {
    use msbl_core::policy::{FamilyMode, MacroAction, Policy, PolicyFamily};
    let env = ConvEnv::new(ConvEnvSpec::default());
    let root = RngStream::new(2);
    let logger = UniformPolicy::new(10);
    let mut collect_rng = root.substream("collect-L1");
    let data = collect_logged_data(&env, 1, &logger, 400, &LowerPolicies::EMPTY, &mut collect_rng)
        .unwrap();
    let cfg = LevelConfig {
        samples: 400,
        hidden_dims: vec![8],
        inverse_temperature: 1.0,
        optimizer: OptimizerConfig {
            epochs: 10,
            seed: 7,
            ..OptimizerConfig::default()
        },
        mode: LevelMode::PolicyModification,
    };
    let family = learn_micro_family(&data, LevelMode::PolicyModification, &env, &cfg).unwrap();
    // Rebuild as a single identity-temperature family: member 0 must equal
    // the base policy's distribution everywhere we probe.
    let single = PolicyFamily::new(
        family.base.clone(),
        vec![MacroAction::temperature(0, 1.0)],
        FamilyMode::PolicyModification,
    )
    .unwrap();
    assert_eq!(single.size(), 1);
    let mut rng = root.substream("probe");
    for _ in 0..20 {
        let ctx = env.sample_context(1, &mut rng);
        let a = single.member_distribution(0, &ctx.features).unwrap();
        let b = family.base.action_distribution(&ctx.features).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() < 1e-15);
        }
    }
}

#[test]
fn monte_carlo_brute_force_matches_enumeration() {
    let env = ToyEnv::new(ToyEnvSpec::default());
    let policy = UniformPolicy::new(8);
    let exact = brute_force_value(&policy, &env, 2, BruteForceMode::Enumerate)
        .unwrap()
        .value;
    let mut rng = RngStream::new(31).substream("mc");
    let mc = brute_force_value(
        &policy,
        &env,
        2,
        BruteForceMode::MonteCarlo {
            episodes: 1_000_000,
            lower: &LowerPolicies::EMPTY,
            rng: &mut rng,
        },
    )
    .unwrap();
    assert!(
        (mc.value - exact).abs() <= 3.0 * mc.standard_error,
        "MC {} vs exact {exact} (3 se = {})",
        mc.value,
        3.0 * mc.standard_error
    );
}

/// Train the micro family the standard way, then check the level-2 skyline:
/// the diversity-preferring group's best temperature is a hot one, the
/// relevance-preferring group's a cool one.
#[test]
fn conversational_skyline_prefers_hot_decoding_for_the_diversity_group() {
    let env = ConvEnv::new(ConvEnvSpec::default());
    let root = RngStream::new(1);
    let logger = UniformPolicy::new(10);
    let mut collect_rng = root.substream("collect-L1");
    let data = collect_logged_data(&env, 1, &logger, 6000, &LowerPolicies::EMPTY, &mut collect_rng)
        .unwrap();
    let cfg = LevelConfig {
        samples: 6000,
        hidden_dims: vec![32],
        inverse_temperature: 1.0,
        optimizer: OptimizerConfig {
            epochs: 60,
            learning_rate: 0.05,
            batch_size: 128,
            weight_decay: 0.02,
            seed: root.substream("train-L1").next_u64(),
            ..OptimizerConfig::default()
        },
        mode: LevelMode::PolicyModification,
    };
    let family = learn_micro_family(&data, LevelMode::PolicyModification, &env, &cfg).unwrap();

    let mut sk_rng = root.substream("skyline");
    let deciders = [];
    let lower = LowerPolicies {
        micro_family: Some(&family),
        deciders: &deciders,
    };
    let report = oracle_skyline(&env, 2, 2, &lower, 250, &mut sk_rng).unwrap();
    // Group 0 prefers relevance (cool decoding), group 1 diversity (hot).
    assert!(
        report.best_action[0] <= 1,
        "relevance group skyline should be a cool temperature, got index {}",
        report.best_action[0]
    );
    assert!(
        report.best_action[1] >= 4,
        "diversity group skyline should be a hot temperature, got index {}",
        report.best_action[1]
    );
    // Skyline dominates the fixed alternatives it was computed from.
    assert!(report.group_value[0] >= 0.9);
    assert!(report.group_value[1] >= 0.8);
}

/// Logged conversational micro data passes validation against its logging
/// policy (full support, consistent propensities).
#[test]
fn collected_conversational_data_validates() {
    let env = ConvEnv::new(ConvEnvSpec::default());
    let logger = UniformPolicy::new(10);
    let mut rng = RngStream::new(8).substream("collect");
    let data =
        collect_logged_data(&env, 1, &logger, 500, &LowerPolicies::EMPTY, &mut rng).unwrap();
    let report = msbl_core::data::validate_dataset(&data, 10, Some(&logger));
    assert!(report.is_clean(), "{:?}", report.violations);
    assert!(data.interactions.iter().all(|it| it.reward > 0.0 && it.reward <= 1.0));
}
