//! `msbl` — deterministic experiment runner for multi-scale off-policy
//! bandit learning.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use msbl_cli::config::{EnvChoice, ExperimentConfig};
use msbl_cli::format::{fmt_f64, read_results, write_atomic, Json};
use msbl_cli::runner::{self, aggregate};
use msbl_core::baseline::{
    default_macro_sample_grid, q_learning, sample_efficiency_ratio, QLearningConfig,
};
use msbl_core::env::toy::{ToyEnv, ToyEnvSpec};
use msbl_core::pacbayes;
use msbl_core::rng::RngStream;
use msbl_core::train::OptimizerConfig;

#[derive(Parser)]
#[command(
    name = "msbl",
    about = "Multi-scale off-policy bandit learning: synthetic environments, nested policy training, baselines",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonRun {
    /// Override the seed list with a single seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: $MSBL_OUT_ROOT or ./runs, plus a
    /// subcommand-specific subdirectory).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Parallel worker slots for seeds and sweep points.
    #[arg(long, default_value_t = 2)]
    jobs: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment from a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        common: CommonRun,
    },
    /// Print the informed-prior sample-savings report.
    Pacbayes {
        /// Bound coefficient (samples per unit KL).
        #[arg(long, default_value_t = pacbayes::EXAMPLE_COEFFICIENT)]
        coefficient: f64,
        /// Timescale ratio used to charge lower-level samples.
        #[arg(long, default_value_t = pacbayes::EXAMPLE_TIMESCALE)]
        timescale: f64,
        /// Emit JSON instead of the aligned text report.
        #[arg(long)]
        json: bool,
    },
    /// Toy selection environment: learned boosts vs tabular Q-learning
    /// sample efficiency, sweeping the selection size k.
    ToyRl {
        /// Selection sizes to sweep.
        #[arg(long, value_delimiter = ',', default_values_t = vec![2usize, 4, 6])]
        k: Vec<usize>,
        /// Q-learning episode cap per seed.
        #[arg(long, default_value_t = 500_000)]
        rl_cap: usize,
        #[command(flatten)]
        common: CommonRun,
    },
    /// Conversational recommender experiment (3 levels).
    Conv {
        /// Feature noise level.
        #[arg(long, default_value_t = 0.1)]
        sigma_f: f64,
        /// Sweep sigma_f over the standard grid instead.
        #[arg(long)]
        sweep_sigma_f: bool,
        #[command(flatten)]
        common: CommonRun,
    },
    /// Ranking / boost experiment (2 levels).
    Ranking {
        #[arg(long, default_value_t = 2)]
        groups: usize,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long, default_value_t = 0.0)]
        sigma_s: f64,
        /// Sweep one dimension: groups | size | noise.
        #[arg(long)]
        sweep: Option<String>,
        #[command(flatten)]
        common: CommonRun,
    },
    /// Re-evaluate a stored policy directory against an environment config.
    Eval {
        policy_dir: PathBuf,
        env_config: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 300)]
        episodes: usize,
    },
}

fn out_root() -> PathBuf {
    std::env::var_os("MSBL_OUT_ROOT")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"))
}

fn apply_common(config: &mut ExperimentConfig, common: &CommonRun) {
    if let Some(seed) = common.seed {
        config.seeds = vec![seed];
    }
}

fn print_aggregates(rows: &[msbl_cli::format::ResultRow]) {
    println!(
        "{:<16} {:>5} {:>12} {:>12} {:>6}",
        "policy", "level", "mean", "sd(seeds)", "n"
    );
    for (policy, level, mean, sd, n) in aggregate(rows) {
        println!("{policy:<16} {level:>5} {mean:>12.4} {sd:>12.4} {n:>6}");
    }
}

fn run_config(config: &ExperimentConfig, out: PathBuf, jobs: usize) -> Result<(), String> {
    let output = runner::run(config, &out, jobs).map_err(|e| e.to_string())?;
    println!("run complete: {}", output.dir.display());
    print_aggregates(&output.rows);
    println!("wall clock: {:.1}s", output.wall_clock_s);
    Ok(())
}

fn pacbayes_report(coefficient: f64, timescale: f64, json: bool) {
    let r = pacbayes::reproduce_numerical_example_with(coefficient, timescale);
    if json {
        let j = Json::Obj(vec![
            ("dim".into(), Json::Int(r.dim as i64)),
            ("coefficient".into(), Json::Num(r.coefficient)),
            ("timescale_ratio".into(), Json::Num(r.timescale_ratio)),
            ("kl_uninformed".into(), Json::Num(r.kl_uninformed)),
            ("kl_informed".into(), Json::Num(r.kl_informed)),
            ("kl_micro_posterior".into(), Json::Num(r.kl_micro_posterior)),
            ("n_uninformed".into(), Json::Num(r.n_uninformed)),
            ("n_informed".into(), Json::Num(r.n_informed)),
            ("n_micro".into(), Json::Num(r.n_micro)),
            ("reduction".into(), Json::Num(r.reduction)),
            (
                "reduction_with_micro_cost".into(),
                Json::Num(r.reduction_with_micro_cost),
            ),
        ]);
        println!("{}", j.render());
    } else {
        println!("informed-prior sample savings (d = {}, c = {}, T = {})", r.dim, r.coefficient, r.timescale_ratio);
        println!("  KL(target || uninformed prior)   = {:>12.4}", r.kl_uninformed);
        println!("  KL(target || informed prior)     = {:>12.4}", r.kl_informed);
        println!("  KL(micro posterior || prior)     = {:>12.4}", r.kl_micro_posterior);
        println!("  n_uninformed                     = {:>12.1}", r.n_uninformed);
        println!("  n_informed                       = {:>12.1}", r.n_informed);
        println!("  n_micro                          = {:>12.1}", r.n_micro);
        println!("  sample reduction                 = {:>11.1}%", 100.0 * r.reduction);
        println!(
            "  reduction incl. micro data cost  = {:>11.1}%",
            100.0 * r.reduction_with_micro_cost
        );
    }
}

fn toy_rl(ks: &[usize], rl_cap: usize, common: &CommonRun) -> Result<(), String> {
    let out = common
        .out
        .clone()
        .unwrap_or_else(|| out_root().join("toy-rl"));
    let seeds: Vec<u64> = match common.seed {
        Some(s) => vec![s],
        None => vec![1, 2, 3, 4, 5],
    };
    let opt = OptimizerConfig {
        epochs: 150,
        learning_rate: 0.05,
        batch_size: 64,
        ..OptimizerConfig::default()
    };
    let mut table = String::from("k,target,rl_episodes,macro_samples,ratio,censored\n");
    println!(
        "{:>3} {:>8} {:>12} {:>14} {:>8} {:>9}",
        "k", "target", "rl_episodes", "macro_samples", "ratio", "censored"
    );
    for k in ks {
        let env = ToyEnv::new(ToyEnvSpec {
            k: *k,
            ..ToyEnvSpec::default()
        });
        let report = sample_efficiency_ratio(
            &env,
            1.0,
            &seeds,
            rl_cap,
            &QLearningConfig::default(),
            &opt,
            &default_macro_sample_grid(),
        );
        println!(
            "{:>3} {:>8.2} {:>12} {:>14} {:>8.1} {:>9}",
            k, report.target_value, report.rl_episodes, report.macro_samples, report.ratio,
            report.censored
        );
        table.push_str(&format!(
            "{},{},{},{},{},{}\n",
            k,
            fmt_f64(report.target_value),
            report.rl_episodes,
            report.macro_samples,
            fmt_f64(report.ratio),
            report.censored
        ));
        // Learning curves per seed, for plotting.
        for seed in &seeds {
            let mut rng = RngStream::new(*seed).substream("rl-baseline");
            let result = q_learning(&env, rl_cap.min(100_000), &QLearningConfig::default(), &mut rng);
            let mut curve = String::from("episode,expected_value\n");
            for (ep, v) in &result.curve {
                curve.push_str(&format!("{ep},{}\n", fmt_f64(*v)));
            }
            write_atomic(
                &out.join(format!("curves/qlearning_k{k}_seed{seed}.csv")),
                &curve,
            )
            .map_err(|e| e.to_string())?;
        }
    }
    write_atomic(&out.join("toy_rl.csv"), &table).map_err(|e| e.to_string())?;
    println!("sample-efficiency table: {}", out.join("toy_rl.csv").display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result: Result<(), (u8, String)> = match cli.command {
        Command::Run { config, common } => (|| {
            let text = std::fs::read_to_string(&config)
                .map_err(|e| (2u8, format!("cannot read {}: {e}", config.display())))?;
            let mut parsed =
                ExperimentConfig::parse(&text).map_err(|e| (2u8, format!("invalid config: {e}")))?;
            apply_common(&mut parsed, &common);
            let out = common
                .out
                .clone()
                .or_else(|| parsed.out.clone().map(PathBuf::from))
                .unwrap_or_else(|| out_root().join(parsed.env.name()));
            run_config(&parsed, out, common.jobs).map_err(|e| (1u8, e))
        })(),
        Command::Pacbayes {
            coefficient,
            timescale,
            json,
        } => {
            pacbayes_report(coefficient, timescale, json);
            Ok(())
        }
        Command::ToyRl { k, rl_cap, common } => toy_rl(&k, rl_cap, &common).map_err(|e| (1u8, e)),
        Command::Conv {
            sigma_f,
            sweep_sigma_f,
            common,
        } => (|| {
            let grid: Vec<f64> = if sweep_sigma_f {
                vec![0.05, 0.1, 0.2, 0.3, 0.4, 0.5]
            } else {
                vec![sigma_f]
            };
            for value in grid {
                let mut config = ExperimentConfig::default_for("conv").unwrap();
                if let EnvChoice::Conv(spec) = &mut config.env {
                    spec.sigma_f = value;
                }
                apply_common(&mut config, &common);
                let out = common
                    .out
                    .clone()
                    .unwrap_or_else(|| out_root().join("conv"))
                    .join(format!("sigma_f_{value}"));
                println!("== conv sigma_f = {value} ==");
                run_config(&config, out, common.jobs).map_err(|e| (1u8, e))?;
            }
            Ok(())
        })(),
        Command::Ranking {
            groups,
            k,
            sigma_s,
            sweep,
            common,
        } => (|| {
            let points: Vec<(usize, usize, f64)> = match sweep.as_deref() {
                None => vec![(groups, k, sigma_s)],
                Some("groups") => vec![2, 3, 4, 5].into_iter().map(|g| (g, k, sigma_s)).collect(),
                Some("size") => vec![5, 10, 20, 40].into_iter().map(|s| (groups, s, sigma_s)).collect(),
                Some("noise") => [0.0, 0.2, 0.4, 0.6, 0.8, 1.0, 2.0]
                    .into_iter()
                    .map(|n| (groups, k, n))
                    .collect(),
                Some(other) => return Err((2u8, format!("unknown sweep `{other}`"))),
            };
            for (g, size, noise) in points {
                let mut config = ExperimentConfig::default_for("ranking").unwrap();
                if let EnvChoice::Ranking(spec) = &mut config.env {
                    spec.groups = g;
                    spec.ranking_size = size;
                    spec.score_noise = noise;
                }
                apply_common(&mut config, &common);
                let out = common
                    .out
                    .clone()
                    .unwrap_or_else(|| out_root().join("ranking"))
                    .join(format!("g{g}_k{size}_noise{noise}"));
                println!("== ranking groups={g} k={size} sigma_s={noise} ==");
                run_config(&config, out, common.jobs).map_err(|e| (1u8, e))?;
            }
            Ok(())
        })(),
        Command::Eval {
            policy_dir,
            env_config,
            seed,
            episodes,
        } => (|| {
            let text = std::fs::read_to_string(&env_config)
                .map_err(|e| (2u8, format!("cannot read {}: {e}", env_config.display())))?;
            let config =
                ExperimentConfig::parse(&text).map_err(|e| (2u8, format!("invalid config: {e}")))?;
            let rows = runner::eval_stored(&policy_dir, &config, seed, episodes)
                .map_err(|e| (1u8, e.to_string()))?;
            println!("policy,level,mean_reward,std_error,episodes");
            for r in &rows {
                println!(
                    "{},{},{},{},{}",
                    r.policy,
                    r.level,
                    fmt_f64(r.mean_reward),
                    fmt_f64(r.std_error),
                    r.episodes
                );
            }
            // Cross-check against the stored results when present.
            if let Some(dir) = policy_dir.parent().and_then(|p| p.parent()) {
                let stored = dir.join("results.csv");
                if stored.is_file() {
                    if let Ok(rows_stored) = read_results(&stored) {
                        let matches = rows.iter().all(|r| {
                            rows_stored.iter().any(|s| {
                                s.seed == seed
                                    && s.level == r.level
                                    && (s.mean_reward - r.mean_reward).abs() < 1e-12
                            })
                        });
                        println!("matches stored results: {matches}");
                    }
                }
            }
            Ok(())
        })(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, message)) => {
            eprintln!("error: {message}");
            ExitCode::from(code)
        }
    }
}
