//! Experiment orchestration: builds the environment, learns the multi-scale
//! stack per seed, evaluates every enabled policy on shared held-out
//! episodes, and writes results.csv / summary.json plus all intermediate
//! artifacts. Seeds run in parallel worker slots; every phase draws from
//! labeled sub-streams of its seed, and rows are sorted before writing, so
//! identical configs produce byte-identical result tables regardless of
//! scheduling.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use msbl_core::baseline::{
    expected_greedy_value, oracle_skyline, q_learning, QLearningConfig, SkylineReport,
};
use msbl_core::env::conv::ConvEnv;
use msbl_core::env::rank::RankEnv;
use msbl_core::env::toy::ToyEnv;
use msbl_core::env::{LowerPolicies, MultiScaleEnv};
use msbl_core::msbl::{
    multiscale_inference, policy_learning_to, EvalStack, InferenceSummary, LearnOutput,
    LevelConfig, LevelDecision, LevelMode, LevelStack, MsblError, MultiScalePolicy,
};
use msbl_core::rng::RngStream;

use crate::config::{EnvChoice, ExperimentConfig, LevelTrain};
use crate::format::{
    self, write_atomic, write_dataset, write_family, write_policy, FormatError, Json, ResultRow,
};

/// Default Q-learning budget for the toy baseline (configurable in tests
/// through [`run_toy_seed`]'s config).
pub const QLEARNING_EPISODES: usize = 150_000;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Msbl(#[from] MsblError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("baseline failure: {0}")]
    Baseline(String),
}

pub struct RunOutput {
    pub dir: PathBuf,
    pub rows: Vec<ResultRow>,
    pub wall_clock_s: f64,
}

fn level_config(train: &LevelTrain, mode: LevelMode) -> LevelConfig {
    LevelConfig {
        samples: train.samples,
        hidden_dims: train.hidden.clone(),
        inverse_temperature: train.beta,
        optimizer: train.optimizer.clone(),
        mode,
    }
}

fn rows_from_summary(
    experiment: &str,
    seed: u64,
    policy: &str,
    summary: &InferenceSummary,
) -> Vec<ResultRow> {
    summary
        .per_level
        .iter()
        .map(|l| ResultRow {
            experiment: experiment.to_string(),
            seed,
            policy: policy.to_string(),
            level: l.level,
            mean_reward: l.mean,
            std_error: l.std_error,
            episodes: summary.episodes,
        })
        .collect()
}

struct SeedArtifacts {
    learned: Vec<(String, LearnOutput)>,
    skylines: Vec<(u32, SkylineReport)>,
}

/// Evaluate a set of named stacks on shared episode sub-streams.
fn evaluate_stacks(
    env: &dyn MultiScaleEnv,
    experiment: &str,
    seed: u64,
    episode_level: u32,
    episodes: usize,
    eval_rng: &RngStream,
    stacks: &[(String, EvalStack)],
) -> Result<Vec<ResultRow>, RunError> {
    let mut rows = Vec::new();
    for (name, stack) in stacks {
        let summary = multiscale_inference(stack, env, episode_level, episodes, eval_rng)?;
        rows.extend(rows_from_summary(experiment, seed, name, &summary));
    }
    Ok(rows)
}

fn toy_stack(config: &ExperimentConfig) -> LevelStack {
    LevelStack {
        levels: vec![
            LevelConfig {
                samples: 0,
                hidden_dims: vec![],
                inverse_temperature: 1.0,
                optimizer: Default::default(),
                mode: LevelMode::Builtin,
            },
            level_config(&config.levels[0], LevelMode::PolicyModification),
        ],
    }
}

fn run_toy_seed(
    env: &ToyEnv,
    config: &ExperimentConfig,
    seed: u64,
) -> Result<(Vec<ResultRow>, SeedArtifacts), RunError> {
    let root = RngStream::new(seed);
    let stack = toy_stack(config);
    let learned = policy_learning_to(env, &stack, 2, &root)?;

    let mut stacks: Vec<(String, EvalStack)> = vec![(
        "msbl".into(),
        EvalStack::from_policy(&learned.policy),
    )];
    let toggles = &config.baselines;
    if toggles.uniform {
        stacks.push(("uniform".into(), plain_stack(LevelDecision::Uniform)));
    }
    if toggles.micro_only {
        stacks.push(("micro_only".into(), plain_stack(LevelDecision::Identity)));
    }
    if toggles.fixed {
        for j in 0..env.macro_actions(2).len() {
            stacks.push((format!("fixed_boost_{j}"), plain_stack(LevelDecision::Fixed(j))));
        }
    }
    let mut skylines = Vec::new();
    if toggles.skyline {
        let mut sk_rng = root.substream("skyline");
        let report = oracle_skyline(env, 2, 2, &LowerPolicies::EMPTY, 0, &mut sk_rng)
            .map_err(|e| RunError::Baseline(e.to_string()))?;
        stacks.push((
            "skyline".into(),
            plain_stack(LevelDecision::GroupOracle(report.best_action.clone())),
        ));
        skylines.push((2, report));
    }

    let eval_rng = root.substream("eval");
    let mut rows = evaluate_stacks(env, "toy", seed, 2, config.eval_episodes, &eval_rng, &stacks)?;

    if toggles.qlearning {
        let mut q_rng = root.substream("qlearning");
        let result = q_learning(env, QLEARNING_EPISODES, &QLearningConfig::default(), &mut q_rng);
        let value = expected_greedy_value(env, &result.table);
        rows.push(ResultRow {
            experiment: "toy".into(),
            seed,
            policy: "qlearning".into(),
            level: 2,
            mean_reward: value,
            std_error: 0.0,
            episodes: QLEARNING_EPISODES,
        });
    }

    Ok((
        rows,
        SeedArtifacts {
            learned: vec![("msbl".into(), learned)],
            skylines,
        },
    ))
}

fn plain_stack(decision: LevelDecision) -> EvalStack {
    EvalStack {
        micro: None,
        deciders: vec![decision],
    }
}

fn with_micro(policy: &MultiScalePolicy, deciders: Vec<LevelDecision>) -> EvalStack {
    EvalStack {
        micro: policy.micro.clone(),
        deciders,
    }
}

fn conv_stacks(config: &ExperimentConfig) -> (LevelStack, LevelStack) {
    let full = LevelStack {
        levels: vec![
            level_config(&config.levels[0], LevelMode::PolicyModification),
            level_config(&config.levels[1], LevelMode::FeedbackModification),
            level_config(&config.levels[2], LevelMode::PolicyModification),
        ],
    };
    let two = LevelStack {
        levels: vec![
            level_config(&config.levels[0], LevelMode::PolicyModification),
            level_config(&config.levels[1], LevelMode::PolicyModification),
        ],
    };
    (full, two)
}

fn run_conv_seed(
    env: &ConvEnv,
    config: &ExperimentConfig,
    seed: u64,
) -> Result<(Vec<ResultRow>, SeedArtifacts), RunError> {
    let root = RngStream::new(seed);
    let (full_stack, two_stack) = conv_stacks(config);
    // The two stacks share sub-stream labels, so they train the identical
    // micro family; the three-level stack additionally conditions level 2.
    let msbl3 = policy_learning_to(env, &full_stack, 3, &root)?;
    let msbl2 = policy_learning_to(env, &two_stack, 2, &root)?;

    let toggles = &config.baselines;
    let mut l3_stacks: Vec<(String, EvalStack)> = vec![
        ("msbl3".into(), EvalStack::from_policy(&msbl3.policy)),
        ("msbl2".into(), EvalStack::from_policy(&msbl2.policy)),
    ];
    if toggles.micro_only {
        l3_stacks.push(("micro_only".into(), with_micro(&msbl2.policy, vec![])));
    }
    if toggles.uniform {
        // Random macro intervention at the top level, conditional level 2.
        l3_stacks.push((
            "random_l3".into(),
            with_micro(
                &msbl3.policy,
                vec![
                    LevelDecision::Policy(msbl3.policy.upper[0].clone()),
                    LevelDecision::Uniform,
                ],
            ),
        ));
    }
    let mut skylines = Vec::new();
    if toggles.skyline {
        let mut sk_rng = root.substream("skyline");
        let deciders = [];
        let lower = LowerPolicies {
            micro_family: msbl2.policy.micro.as_ref(),
            deciders: &deciders,
        };
        let report = oracle_skyline(env, 2, 2, &lower, 300, &mut sk_rng)
            .map_err(|e| RunError::Baseline(e.to_string()))?;
        l3_stacks.push((
            "skyline".into(),
            with_micro(
                &msbl2.policy,
                vec![LevelDecision::GroupOracle(report.best_action.clone())],
            ),
        ));
        skylines.push((2, report));
    }

    let eval_rng = root.substream("eval");
    let mut rows = evaluate_stacks(env, "conv", seed, 3, config.eval_episodes, &eval_rng, &l3_stacks)?;

    // Medium-term metric: evaluate temperature policies directly at level 2
    // on the marginal context distribution.
    let mut l2_stacks: Vec<(String, EvalStack)> = vec![(
        "msbl".into(),
        EvalStack::from_policy(&msbl2.policy),
    )];
    if toggles.fixed {
        for j in 0..env.macro_actions(2).len() {
            l2_stacks.push((
                format!("fixed_tau_{j}"),
                with_micro(&msbl2.policy, vec![LevelDecision::Fixed(j)]),
            ));
        }
    }
    if toggles.uniform {
        l2_stacks.push((
            "uniform_tau".into(),
            with_micro(&msbl2.policy, vec![LevelDecision::Uniform]),
        ));
    }
    if let Some((_, report)) = skylines.first() {
        l2_stacks.push((
            "skyline_tau".into(),
            with_micro(
                &msbl2.policy,
                vec![LevelDecision::GroupOracle(report.best_action.clone())],
            ),
        ));
    }
    let l2_eval_rng = root.substream("eval-l2");
    rows.extend(evaluate_stacks(
        env,
        "conv",
        seed,
        2,
        config.eval_episodes,
        &l2_eval_rng,
        &l2_stacks,
    )?);

    Ok((
        rows,
        SeedArtifacts {
            learned: vec![("msbl3".into(), msbl3), ("msbl2".into(), msbl2)],
            skylines,
        },
    ))
}

fn run_ranking_seed(
    env: &RankEnv,
    config: &ExperimentConfig,
    seed: u64,
) -> Result<(Vec<ResultRow>, SeedArtifacts), RunError> {
    let root = RngStream::new(seed);
    let stack = toy_stack(config); // builtin micro + one learned level
    let learned = policy_learning_to(env, &stack, 2, &root)?;

    let mut stacks: Vec<(String, EvalStack)> = vec![(
        "msbl".into(),
        EvalStack::from_policy(&learned.policy),
    )];
    let toggles = &config.baselines;
    if toggles.uniform {
        stacks.push(("random_boost".into(), plain_stack(LevelDecision::Uniform)));
    }
    if toggles.micro_only {
        stacks.push(("micro_only".into(), plain_stack(LevelDecision::Identity)));
    }
    if toggles.fixed {
        for j in 0..env.macro_actions(2).len() {
            stacks.push((format!("fixed_boost_{j}"), plain_stack(LevelDecision::Fixed(j))));
        }
    }
    let mut skylines = Vec::new();
    if toggles.skyline {
        let mut sk_rng = root.substream("skyline");
        let report = oracle_skyline(
            env,
            2,
            env.spec().groups,
            &LowerPolicies::EMPTY,
            200,
            &mut sk_rng,
        )
        .map_err(|e| RunError::Baseline(e.to_string()))?;
        stacks.push((
            "skyline".into(),
            plain_stack(LevelDecision::GroupOracle(report.best_action.clone())),
        ));
        skylines.push((2, report));
    }

    let eval_rng = root.substream("eval");
    let rows = evaluate_stacks(env, "ranking", seed, 2, config.eval_episodes, &eval_rng, &stacks)?;
    Ok((
        rows,
        SeedArtifacts {
            learned: vec![("msbl".into(), learned)],
            skylines,
        },
    ))
}

fn write_seed_artifacts(
    dir: &Path,
    env: &dyn MultiScaleEnv,
    artifacts: &SeedArtifacts,
) -> Result<(), FormatError> {
    for (name, learned) in &artifacts.learned {
        let base = dir.join(name);
        for (level, dataset) in &learned.datasets {
            let action_count = if *level == 1 {
                env.levels()[0].action_count
            } else {
                env.macro_actions(*level).len()
            };
            write_dataset(
                &base.join(format!("dataset_l{level}.csv")),
                dataset,
                action_count,
            )?;
        }
        if let Some(family) = &learned.policy.micro {
            write_family(&base.join("micro_family"), family)?;
        }
        for (i, policy) in learned.policy.upper.iter().enumerate() {
            write_policy(&base.join(format!("level{}.policy", i + 2)), policy)?;
        }
    }
    if !artifacts.skylines.is_empty() {
        let mut s = String::from("level,group,best_action,value\n");
        for (level, report) in &artifacts.skylines {
            for (g, (a, v)) in report
                .best_action
                .iter()
                .zip(report.group_value.iter())
                .enumerate()
            {
                s.push_str(&format!("{level},{g},{a},{}\n", format::fmt_f64(*v)));
            }
        }
        write_atomic(&dir.join("skyline.csv"), &s)?;
    }
    Ok(())
}

/// Execute a full experiment config into `out_dir`.
pub fn run(config: &ExperimentConfig, out_dir: &Path, jobs: usize) -> Result<RunOutput, RunError> {
    let start = Instant::now();
    let seed_results: Vec<Result<(u64, Vec<ResultRow>, SeedArtifacts), RunError>> = {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build()
            .expect("thread pool");
        pool.install(|| {
            config
                .seeds
                .par_iter()
                .map(|seed| {
                    let (rows, artifacts) = match &config.env {
                        EnvChoice::Toy(spec) => {
                            let env = ToyEnv::new(spec.clone());
                            run_toy_seed(&env, config, *seed)?
                        }
                        EnvChoice::Conv(spec) => {
                            let env = ConvEnv::new(spec.clone());
                            run_conv_seed(&env, config, *seed)?
                        }
                        EnvChoice::Ranking(spec) => {
                            let env = RankEnv::new(spec.clone());
                            run_ranking_seed(&env, config, *seed)?
                        }
                    };
                    Ok((*seed, rows, artifacts))
                })
                .collect()
        })
    };

    let mut rows: Vec<ResultRow> = Vec::new();
    let env: Box<dyn MultiScaleEnv> = match &config.env {
        EnvChoice::Toy(spec) => Box::new(ToyEnv::new(spec.clone())),
        EnvChoice::Conv(spec) => Box::new(ConvEnv::new(spec.clone())),
        EnvChoice::Ranking(spec) => Box::new(RankEnv::new(spec.clone())),
    };
    for result in seed_results {
        let (seed, seed_rows, artifacts) = result?;
        write_seed_artifacts(&out_dir.join(format!("seed-{seed}")), env.as_ref(), &artifacts)?;
        rows.extend(seed_rows);
    }
    rows.sort_by(|a, b| {
        (a.seed, &a.policy, a.level).cmp(&(b.seed, &b.policy, b.level))
    });

    write_atomic(&out_dir.join("results.csv"), &format::results_to_string(&rows))?;
    write_atomic(&out_dir.join("config.resolved"), &config.render())?;
    for (name, contents) in env.dump_tables() {
        write_atomic(&out_dir.join("ground_truth").join(name), &contents)?;
    }
    let wall_clock_s = start.elapsed().as_secs_f64();
    write_atomic(
        &out_dir.join("summary.json"),
        &summary_json(config, &rows, wall_clock_s).render(),
    )?;
    Ok(RunOutput {
        dir: out_dir.to_path_buf(),
        rows,
        wall_clock_s,
    })
}

/// Aggregate rows across seeds: mean and standard deviation per
/// (policy, level).
pub fn aggregate(rows: &[ResultRow]) -> Vec<(String, u32, f64, f64, usize)> {
    let mut grouped: std::collections::BTreeMap<(String, u32), Vec<f64>> =
        std::collections::BTreeMap::new();
    for r in rows {
        grouped
            .entry((r.policy.clone(), r.level))
            .or_default()
            .push(r.mean_reward);
    }
    grouped
        .into_iter()
        .map(|((policy, level), values)| {
            let n = values.len();
            let mean = values.iter().sum::<f64>() / n as f64;
            let sd = if n > 1 {
                (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64)
                    .sqrt()
            } else {
                0.0
            };
            (policy, level, mean, sd, n)
        })
        .collect()
}

fn summary_json(config: &ExperimentConfig, rows: &[ResultRow], wall_clock_s: f64) -> Json {
    let aggregates = aggregate(rows)
        .into_iter()
        .map(|(policy, level, mean, sd, n)| {
            Json::Obj(vec![
                ("policy".into(), Json::Str(policy)),
                ("level".into(), Json::Int(level as i64)),
                ("mean_reward".into(), Json::Num(mean)),
                ("std_dev_over_seeds".into(), Json::Num(sd)),
                ("seeds".into(), Json::Int(n as i64)),
            ])
        })
        .collect();
    Json::Obj(vec![
        ("experiment".into(), Json::Str(config.env.name().into())),
        (
            "seeds".into(),
            Json::Arr(config.seeds.iter().map(|s| Json::Int(*s as i64)).collect()),
        ),
        ("eval_episodes".into(), Json::Int(config.eval_episodes as i64)),
        ("aggregates".into(), Json::Arr(aggregates)),
        ("wall_clock_s".into(), Json::Num(wall_clock_s)),
    ])
}

/// Rebuild the evaluation stack of a stored run and re-run inference
/// (the `eval` subcommand).
pub fn eval_stored(
    policy_dir: &Path,
    config: &ExperimentConfig,
    seed: u64,
    episodes: usize,
) -> Result<Vec<ResultRow>, RunError> {
    let env: Box<dyn MultiScaleEnv> = match &config.env {
        EnvChoice::Toy(spec) => Box::new(ToyEnv::new(spec.clone())),
        EnvChoice::Conv(spec) => Box::new(ConvEnv::new(spec.clone())),
        EnvChoice::Ranking(spec) => Box::new(RankEnv::new(spec.clone())),
    };
    let micro_dir = policy_dir.join("micro_family");
    let micro = if micro_dir.is_dir() {
        Some(format::read_family(&micro_dir)?)
    } else {
        None
    };
    let mut upper = Vec::new();
    for level in 2..=env.levels().len() as u32 {
        let path = policy_dir.join(format!("level{level}.policy"));
        if path.is_file() {
            upper.push(LevelDecision::Policy(format::read_policy(&path)?));
        }
    }
    let stack = EvalStack {
        micro,
        deciders: upper,
    };
    let root = RngStream::new(seed);
    let eval_rng = root.substream("eval");
    // Evaluate at the environment's top level, exactly like the run did.
    let episode_level = env.levels().len() as u32;
    let summary = multiscale_inference(&stack, env.as_ref(), episode_level, episodes, &eval_rng)?;
    let name = policy_dir
        .file_name()
        .map(|s| s.to_string_lossy().to_string())
        .unwrap_or_else(|| "stored".into());
    Ok(rows_from_summary(config.env.name(), seed, &name, &summary))
}
