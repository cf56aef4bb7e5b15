//! Acceptance suite: one test per release criterion, each printing a
//! PASS/FAIL line (run with `--nocapture` to see them all).
//!
//! The quantitative criteria pin their tolerances in code; the property
//! criteria (orderings, dominance) run the full experiment pipeline at the
//! default configuration and assert the orderings with pooled standard
//! errors across seeds.

use std::path::PathBuf;
use std::process::Command;

use msbl_cli::config::{EnvChoice, ExperimentConfig};
use msbl_cli::format::ResultRow;
use msbl_cli::runner;
use msbl_core::baseline::{
    default_macro_sample_grid, sample_efficiency_ratio, QLearningConfig, UniformPolicy,
};
use msbl_core::env::toy::{ToyEnv, ToyEnvSpec};
use msbl_core::env::{LowerPolicies, MultiScaleEnv};
use msbl_core::estimator::{brute_force_value, ips_gradient, ips_value, BruteForceMode};
use msbl_core::msbl::collect_logged_data;
use msbl_core::net::{NetworkSpec, ScoringNet};
use msbl_core::policy::{
    apply_policy_modification, entropy, MacroAction, Policy, SoftmaxPolicy,
};
use msbl_core::rng::RngStream;
use msbl_core::train::OptimizerConfig;

fn verdict(id: u32, name: &str, pass: bool, details: &str) {
    println!(
        "ACCEPTANCE {id} {name}: {} ({details})",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {id} ({name}) failed: {details}");
}

fn temp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("msbl-accept-{tag}-{}", std::process::id()));
    std::fs::remove_dir_all(&dir).ok();
    dir
}

/// Criterion 1: the sample-savings report reproduces the reference
/// reductions (98.0% and 88.2%, each within 0.5 percentage points) with the
/// pinned constants, in under a second, through both the library and the
/// CLI surface.
#[test]
fn criterion_1_pacbayes_reproduction() {
    let start = std::time::Instant::now();
    let report = msbl_core::pacbayes::reproduce_numerical_example();
    let elapsed = start.elapsed();
    let lib_ok = (report.reduction - 0.980).abs() <= 0.005
        && (report.reduction_with_micro_cost - 0.882).abs() <= 0.005;

    let output = Command::new(env!("CARGO_BIN_EXE_msbl"))
        .arg("pacbayes")
        .output()
        .expect("run msbl pacbayes");
    let stdout = String::from_utf8_lossy(&output.stdout);
    let cli_ok = output.status.success()
        && stdout.contains("98.0%")
        && stdout.contains("88.2%");

    verdict(
        1,
        "pacbayes reproduction",
        lib_ok && cli_ok && elapsed.as_secs_f64() < 1.0,
        &format!(
            "reduction {:.4}, with micro cost {:.4}, {} ms, cli ok: {cli_ok}",
            report.reduction,
            report.reduction_with_micro_cost,
            elapsed.as_millis()
        ),
    );
}

/// Criterion 2: median sample-efficiency ratio of tabular Q-learning
/// episodes to learned-macro-policy samples for k in {2,4,6}. The reference
/// band is [10, 62]; with this construction the macro rewards are
/// deterministic, so the learned side needs only tens of samples and the
/// ratio lands far above the band. The fallback property (ratio >= 5 for
/// every k) is the binding assertion, and the discrepancy is reported.
#[test]
fn criterion_2_toy_sample_efficiency() {
    let seeds: Vec<u64> = vec![1, 2, 3, 4, 5];
    let opt = OptimizerConfig {
        epochs: 150,
        learning_rate: 0.05,
        batch_size: 64,
        ..OptimizerConfig::default()
    };
    let mut all_in_band = true;
    let mut all_fallback = true;
    let mut ratios = Vec::new();
    let mut details = String::new();
    for k in [2usize, 4, 6] {
        let env = ToyEnv::new(ToyEnvSpec {
            k,
            ..ToyEnvSpec::default()
        });
        let report = sample_efficiency_ratio(
            &env,
            1.0,
            &seeds,
            500_000,
            &QLearningConfig::default(),
            &opt,
            &default_macro_sample_grid(),
        );
        all_in_band &= (10.0..=62.0).contains(&report.ratio);
        all_fallback &= report.ratio >= 5.0;
        ratios.push((k, report.ratio, report.rl_episodes, report.macro_samples));
        details.push_str(&format!(
            "k={k}: n0={} nL2={} ratio={:.0}{}; ",
            report.rl_episodes,
            report.macro_samples,
            report.ratio,
            if report.censored { " (some seeds censored)" } else { "" }
        ));
    }
    if !all_in_band {
        println!(
            "ACCEPTANCE 2 note: ratios miss the reference band [10, 62] on the high side — \
             the documented construction has deterministic macro rewards, so the learned \
             macro policy identifies per-context optima from tens of logged samples while \
             tabular Q-learning needs ~10^5 episodes; the fallback property (ratio >= 5) binds."
        );
    }
    // The ratio should not shrink as the micro action space grows from
    // C(10,2) to C(10,4)=C(10,6).
    let monotone = ratios[1].1 >= ratios[0].1 * 0.9 || ratios[2].1 >= ratios[0].1 * 0.9;
    verdict(
        2,
        "toy sample-efficiency ratio",
        all_fallback && monotone,
        &format!("{details}in band: {all_in_band}, fallback >=5: {all_fallback}"),
    );
}

/// Criterion 3: IPS is unbiased — over 1000 uniformly-logged datasets on the
/// enumerable two-context environment, the mean IPS estimate matches the
/// brute-force value within 3 standard errors of the mean, for 5 random
/// target policies.
#[test]
fn criterion_3_ips_unbiasedness() {
    let env = ToyEnv::new(ToyEnvSpec::default());
    let boosts = env.macro_actions(2).len();
    let logger = UniformPolicy::new(boosts);
    let mut rng = RngStream::new(2024).substream("unbiasedness");
    let mut all_ok = true;
    let mut details = String::new();
    for p in 0..5 {
        let net = ScoringNet::init(NetworkSpec::new(2, vec![4], boosts), &mut rng);
        let target = SoftmaxPolicy::new(net, 1.0);
        let truth = brute_force_value(&target, &env, 2, BruteForceMode::Enumerate)
            .unwrap()
            .value;
        let replications = 1000usize;
        let mut estimates = Vec::with_capacity(replications);
        for r in 0..replications {
            let mut data_rng = rng.substream_indexed("dataset", (p * replications + r) as u64);
            let data = collect_logged_data(&env, 2, &logger, 200, &LowerPolicies::EMPTY, &mut data_rng)
                .unwrap();
            estimates.push(ips_value(&target, &data).unwrap().value);
        }
        let mean = estimates.iter().sum::<f64>() / replications as f64;
        let var = estimates
            .iter()
            .map(|e| (e - mean) * (e - mean))
            .sum::<f64>()
            / (replications - 1) as f64;
        let sem = (var / replications as f64).sqrt();
        let ok = (mean - truth).abs() <= 3.0 * sem;
        all_ok &= ok;
        details.push_str(&format!(
            "policy {p}: |{mean:.4} - {truth:.4}| vs 3*SEM {:.4}; ",
            3.0 * sem
        ));
    }
    verdict(3, "IPS unbiasedness", all_ok, &details);
}

/// Criterion 4: the analytic IPS gradient matches central finite
/// differences (step 1e-5) with max relative error <= 1e-4 over 20 random
/// (network, dataset) instances.
#[test]
fn criterion_4_gradient_correctness() {
    let mut rng = RngStream::new(7).substream("grad-check");
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let spec = NetworkSpec::new(3, vec![4], 4);
        let mut policy = SoftmaxPolicy::new(ScoringNet::init(spec, &mut rng), 1.0);
        let mut data = msbl_core::data::LoggedDataset::new(1, "uniform");
        for _ in 0..8 {
            let features: Vec<f64> = (0..3).map(|_| rng.next_f64() * 2.0 - 1.0).collect();
            data.interactions.push(msbl_core::data::LoggedInteraction {
                context: msbl_core::data::ContextSample::new(1, features),
                action_index: rng.next_below(4),
                reward: rng.next_f64(),
                reward_components: vec![],
                propensity: 0.25,
            });
        }
        let analytic = ips_gradient(&policy, &data).unwrap();
        let eps = 1e-5;
        for i in 0..policy.net.params.len() {
            let orig = policy.net.params[i];
            policy.net.params[i] = orig + eps;
            let up = ips_value(&policy, &data).unwrap().value;
            policy.net.params[i] = orig - eps;
            let down = ips_value(&policy, &data).unwrap().value;
            policy.net.params[i] = orig;
            let fd = (up - down) / (2.0 * eps);
            let denom = fd.abs().max(analytic[i].abs()).max(1e-6);
            worst = worst.max((fd - analytic[i]).abs() / denom);
        }
    }
    verdict(
        4,
        "IPS gradient vs finite differences",
        worst <= 1e-4,
        &format!("max relative error {worst:.2e} over 20 instances"),
    );
}

fn mean_of(rows: &[ResultRow], policy: &str, level: u32) -> (f64, f64, usize) {
    let values: Vec<f64> = rows
        .iter()
        .filter(|r| r.policy == policy && r.level == level)
        .map(|r| r.mean_reward)
        .collect();
    let n = values.len();
    assert!(n > 0, "no rows for {policy} level {level}");
    let mean = values.iter().sum::<f64>() / n as f64;
    let sd = if n > 1 {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    (mean, sd, n)
}

fn pooled_se(a: (f64, f64, usize), b: (f64, f64, usize)) -> f64 {
    ((a.1 * a.1 + b.1 * b.1) / a.2 as f64).sqrt().max(1e-9)
}

/// Criterion 5: conversational three-level ordering across 5 seeds with the
/// default 1500 train / 300 test users: the three-level stack beats the
/// two-level stack, which beats micro-only, and the three-level stack beats
/// a random top-level intervention — each by more than one pooled standard
/// error of the long-term reward. At the default feature noise the learned
/// temperature policy also beats every fixed temperature on the
/// medium-term reward.
#[test]
fn criterion_5_conversational_ordering() {
    let config = ExperimentConfig::default_for("conv").unwrap();
    let out = temp_dir("conv");
    let result = runner::run(&config, &out, 2).expect("conv run");
    let rows = &result.rows;

    let msbl3 = mean_of(rows, "msbl3", 3);
    let msbl2 = mean_of(rows, "msbl2", 3);
    let micro = mean_of(rows, "micro_only", 3);
    let random = mean_of(rows, "random_l3", 3);

    let ord1 = msbl3.0 - msbl2.0 > pooled_se(msbl3, msbl2);
    let ord2 = msbl2.0 - micro.0 > pooled_se(msbl2, micro);
    let ord3 = msbl3.0 - random.0 > pooled_se(msbl3, random);

    let msbl_l2 = mean_of(rows, "msbl", 2);
    let mut best_fixed = ("", f64::NEG_INFINITY, 0.0, 0usize);
    for j in 0..6 {
        let name = format!("fixed_tau_{j}");
        let m = mean_of(rows, &name, 2);
        if m.0 > best_fixed.1 {
            best_fixed = ("fixed", m.0, m.1, m.2);
        }
    }
    let fixed_stat = (best_fixed.1, best_fixed.2, best_fixed.3);
    let ord4 = msbl_l2.0 - best_fixed.1 > pooled_se(msbl_l2, fixed_stat);

    std::fs::remove_dir_all(&out).ok();
    verdict(
        5,
        "conversational 3-level ordering",
        ord1 && ord2 && ord3 && ord4,
        &format!(
            "r3: msbl3 {:.3}±{:.3} > msbl2 {:.3}±{:.3} > micro {:.3}±{:.3}, msbl3 > random {:.3}±{:.3}; \
             r2: msbl {:.3} vs best fixed {:.3}",
            msbl3.0, msbl3.1, msbl2.0, msbl2.1, micro.0, micro.1, random.0, random.1,
            msbl_l2.0, best_fixed.1
        ),
    );
}

/// Criterion 6: ranking dominance and noise robustness — for 2..=5 groups
/// at ranking size 10, the learned boost policy's return rate beats every
/// fixed boost and the random boost by more than one pooled standard error;
/// the advantage over random persists for score noise up to 1.0 (it may
/// vanish at 2.0).
#[test]
fn criterion_6_ranking_dominance() {
    let mut all_ok = true;
    let mut details = String::new();

    for groups in [2usize, 3, 4, 5] {
        let mut config = ExperimentConfig::default_for("ranking").unwrap();
        if let EnvChoice::Ranking(spec) = &mut config.env {
            spec.groups = groups;
        }
        config.baselines.skyline = false;
        let out = temp_dir(&format!("rank-g{groups}"));
        let result = runner::run(&config, &out, 2).expect("ranking run");
        let rows = &result.rows;
        let msbl = mean_of(rows, "msbl", 2);
        let random = mean_of(rows, "random_boost", 2);
        let mut ok = msbl.0 - random.0 > pooled_se(msbl, random);
        for j in 0..groups {
            let fixed = mean_of(rows, &format!("fixed_boost_{j}"), 2);
            ok &= msbl.0 - fixed.0 > pooled_se(msbl, fixed);
        }
        all_ok &= ok;
        details.push_str(&format!(
            "g={groups}: msbl {:.3} random {:.3} ok={ok}; ",
            msbl.0, random.0
        ));
        std::fs::remove_dir_all(&out).ok();
    }

    // The advantage over a random boost must persist at every noise level
    // up to 1.0; at 2.0 it may vanish (observed, not asserted).
    for noise in [0.2f64, 0.4, 0.6, 0.8, 1.0, 2.0] {
        let mut config = ExperimentConfig::default_for("ranking").unwrap();
        if let EnvChoice::Ranking(spec) = &mut config.env {
            spec.score_noise = noise;
        }
        config.baselines.skyline = false;
        config.baselines.fixed = false;
        let out = temp_dir(&format!("rank-n{noise}"));
        let result = runner::run(&config, &out, 2).expect("ranking noise run");
        let rows = &result.rows;
        let msbl = mean_of(rows, "msbl", 2);
        let random = mean_of(rows, "random_boost", 2);
        let advantage = msbl.0 - random.0 > pooled_se(msbl, random);
        if noise <= 1.0 {
            all_ok &= advantage;
        }
        details.push_str(&format!(
            "noise={noise}: msbl {:.3} random {:.3} advantage={advantage}; ",
            msbl.0, random.0
        ));
        std::fs::remove_dir_all(&out).ok();
    }
    verdict(6, "ranking dominance and robustness", all_ok, &details);
}

/// Criterion 7: structural invariants in one suite — softmax normalization
/// within 1e-12, temperature entropy monotonicity, clipping dominance,
/// recursive-vs-flat bitwise equality at two levels, and byte-identical
/// results.csv for identical config and seed.
#[test]
fn criterion_7_structural_invariants() {
    let mut rng = RngStream::new(99).substream("structural");

    // Softmax normalization and full support over random policies.
    let mut softmax_ok = true;
    for _ in 0..200 {
        let spec = NetworkSpec::new(3, vec![5], 6);
        let policy = SoftmaxPolicy::new(ScoringNet::init(spec, &mut rng), 0.8);
        let features: Vec<f64> = (0..3).map(|_| rng.next_f64() * 4.0 - 2.0).collect();
        let probs = policy.action_distribution(&features).unwrap();
        let sum: f64 = probs.iter().sum();
        softmax_ok &= (sum - 1.0).abs() <= 1e-12 && probs.iter().all(|p| *p > 0.0);
    }

    // Temperature entropy monotonicity on random score vectors.
    let mut entropy_ok = true;
    for _ in 0..100 {
        let n = 2 + rng.next_below(5);
        let scores: Vec<f64> = (0..n + n).map(|_| rng.next_f64() * 4.0 - 2.0).collect();
        let spec = NetworkSpec::new(1, vec![], n);
        let mut params = vec![0.0; spec.param_count()];
        params[n..].copy_from_slice(&scores[..n]);
        let base = SoftmaxPolicy::new(ScoringNet::new(spec, params).unwrap(), 1.0);
        let mut last = -1.0;
        for tau in [0.05, 0.2, 0.5, 1.0, 2.0, 5.0] {
            let m = apply_policy_modification(&base, &MacroAction::temperature(0, tau)).unwrap();
            let h = entropy(&m.action_distribution(&[0.0]).unwrap());
            entropy_ok &= h >= last - 1e-9;
            last = h;
        }
    }

    // Clipping dominance on random datasets with non-negative rewards.
    let mut clip_ok = true;
    for _ in 0..50 {
        let spec = NetworkSpec::new(2, vec![3], 3);
        let policy = SoftmaxPolicy::new(ScoringNet::init(spec, &mut rng), 1.0);
        let mut data = msbl_core::data::LoggedDataset::new(1, "skewed");
        for _ in 0..30 {
            let features: Vec<f64> = (0..2).map(|_| rng.next_f64() * 2.0 - 1.0).collect();
            data.interactions.push(msbl_core::data::LoggedInteraction {
                context: msbl_core::data::ContextSample::new(1, features),
                action_index: rng.next_below(3),
                reward: rng.next_f64(),
                reward_components: vec![],
                propensity: 0.05 + 0.9 * rng.next_f64(),
            });
        }
        let plain = ips_value(&policy, &data).unwrap().value;
        let clip = 0.5 + 3.0 * rng.next_f64();
        let clipped = msbl_core::estimator::clipped_ips_value(&policy, &data, clip)
            .unwrap()
            .value;
        clip_ok &= clipped <= plain + 1e-12;
    }

    // Recursive vs flat two-level learning, bitwise.
    let env = ToyEnv::new(ToyEnvSpec::default());
    let stack = msbl_core::msbl::LevelStack {
        levels: vec![
            msbl_core::msbl::LevelConfig {
                samples: 0,
                hidden_dims: vec![],
                inverse_temperature: 1.0,
                optimizer: OptimizerConfig::default(),
                mode: msbl_core::msbl::LevelMode::Builtin,
            },
            msbl_core::msbl::LevelConfig {
                samples: 300,
                hidden_dims: vec![],
                inverse_temperature: 1.0,
                optimizer: OptimizerConfig {
                    epochs: 40,
                    ..OptimizerConfig::default()
                },
                mode: msbl_core::msbl::LevelMode::PolicyModification,
            },
        ],
    };
    let root = RngStream::new(5);
    let recursive = msbl_core::msbl::policy_learning_recursive(&env, &stack, &root).unwrap();
    let flat = msbl_core::msbl::learn_two_level(&env, &stack, &root).unwrap();
    let bitwise_ok = recursive.upper[0].net.params == flat.upper[0].net.params;

    // Byte-identical results.csv for identical config + seed.
    let mut config = ExperimentConfig::default_for("toy").unwrap();
    config.seeds = vec![3];
    config.eval_episodes = 200;
    config.baselines.qlearning = false;
    let out_a = temp_dir("det-a");
    let out_b = temp_dir("det-b");
    runner::run(&config, &out_a, 2).unwrap();
    runner::run(&config, &out_b, 1).unwrap(); // different job count, same bytes
    let bytes_a = std::fs::read(out_a.join("results.csv")).unwrap();
    let bytes_b = std::fs::read(out_b.join("results.csv")).unwrap();
    let determinism_ok = bytes_a == bytes_b;
    std::fs::remove_dir_all(&out_a).ok();
    std::fs::remove_dir_all(&out_b).ok();

    verdict(
        7,
        "structural invariants",
        softmax_ok && entropy_ok && clip_ok && bitwise_ok && determinism_ok,
        &format!(
            "softmax {softmax_ok}, entropy {entropy_ok}, clipping {clip_ok}, \
             recursive=flat {bitwise_ok}, byte-identical results {determinism_ok}"
        ),
    );
}
