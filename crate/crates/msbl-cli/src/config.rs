//! Experiment configuration: a small nested key-value text format with an
//! explicit schema version, strict unknown-key rejection, and per-experiment
//! validation. Every environment constant is spelled out in the resolved
//! config so a run directory documents exactly what produced it.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use msbl_core::env::conv::ConvEnvSpec;
use msbl_core::env::rank::RankEnvSpec;
use msbl_core::env::toy::ToyEnvSpec;
use msbl_core::train::OptimizerConfig;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Malformed { line: usize, text: String },
    #[error("line {line}: unknown section [{0}]", .section)]
    UnknownSection { line: usize, section: String },
    #[error("unknown key `{key}` in section [{section}]")]
    UnknownKey { section: String, key: String },
    #[error("missing required key `{key}` in section [{section}]")]
    MissingKey { section: String, key: String },
    #[error("key `{key}`: invalid value `{value}`")]
    InvalidValue { key: String, value: String },
    #[error("schema version {got} unsupported (expected {want})")]
    SchemaVersion { got: u32, want: u32 },
    #[error("experiment `{0}` is not one of toy | conv | ranking")]
    UnknownExperiment(String),
}

/// Which simulator an experiment runs on.
#[derive(Debug, Clone, PartialEq)]
pub enum EnvChoice {
    Toy(ToyEnvSpec),
    Conv(ConvEnvSpec),
    Ranking(RankEnvSpec),
}

impl EnvChoice {
    pub fn name(&self) -> &'static str {
        match self {
            EnvChoice::Toy(_) => "toy",
            EnvChoice::Conv(_) => "conv",
            EnvChoice::Ranking(_) => "ranking",
        }
    }
}

/// Training configuration of one learned level.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelTrain {
    pub samples: usize,
    pub hidden: Vec<usize>,
    pub beta: f64,
    pub optimizer: OptimizerConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineToggles {
    pub uniform: bool,
    pub fixed: bool,
    pub skyline: bool,
    pub micro_only: bool,
    pub qlearning: bool,
}

impl Default for BaselineToggles {
    fn default() -> Self {
        Self {
            uniform: true,
            fixed: true,
            skyline: true,
            micro_only: true,
            qlearning: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub env: EnvChoice,
    pub seeds: Vec<u64>,
    pub out: Option<String>,
    /// Per learned level, bottom-up. The toy and ranking environments have a
    /// builtin micro level, so their first entry covers level 2.
    pub levels: Vec<LevelTrain>,
    pub baselines: BaselineToggles,
    pub eval_episodes: usize,
}

fn default_level(samples: usize, hidden: Vec<usize>, beta: f64, epochs: usize) -> LevelTrain {
    LevelTrain {
        samples,
        hidden,
        beta,
        optimizer: OptimizerConfig {
            epochs,
            learning_rate: 0.05,
            batch_size: 128,
            ..OptimizerConfig::default()
        },
    }
}

impl ExperimentConfig {
    /// The defaults each subcommand starts from.
    pub fn default_for(experiment: &str) -> Result<Self, ConfigError> {
        match experiment {
            "toy" => Ok(Self {
                env: EnvChoice::Toy(ToyEnvSpec::default()),
                seeds: vec![1, 2, 3, 4, 5],
                out: None,
                levels: vec![default_level(2000, vec![], 1.0, 150)],
                baselines: BaselineToggles {
                    qlearning: true,
                    ..BaselineToggles::default()
                },
                eval_episodes: 2000,
            }),
            "conv" => Ok(Self {
                env: EnvChoice::Conv(ConvEnvSpec::default()),
                seeds: vec![1, 2, 3, 4, 5],
                out: None,
                levels: vec![
                    LevelTrain {
                        samples: 6000,
                        hidden: vec![32],
                        beta: 1.0,
                        optimizer: OptimizerConfig {
                            epochs: 60,
                            learning_rate: 0.05,
                            batch_size: 128,
                            weight_decay: 0.02,
                            ..OptimizerConfig::default()
                        },
                    },
                    LevelTrain {
                        samples: 12000,
                        hidden: vec![],
                        beta: 0.8,
                        optimizer: OptimizerConfig {
                            epochs: 300,
                            learning_rate: 0.01,
                            batch_size: 128,
                            weight_decay: 0.05,
                            restarts: 4,
                            ..OptimizerConfig::default()
                        },
                    },
                    LevelTrain {
                        samples: 1500,
                        hidden: vec![16],
                        beta: 0.8,
                        optimizer: OptimizerConfig {
                            epochs: 200,
                            learning_rate: 0.01,
                            batch_size: 64,
                            weight_decay: 0.02,
                            ..OptimizerConfig::default()
                        },
                    },
                ],
                baselines: BaselineToggles::default(),
                eval_episodes: 300,
            }),
            "ranking" => Ok(Self {
                env: EnvChoice::Ranking(RankEnvSpec::default()),
                seeds: vec![1, 2, 3, 4, 5],
                out: None,
                levels: vec![default_level(2400, vec![16], 0.8, 120)],
                baselines: BaselineToggles::default(),
                eval_episodes: 400,
            }),
            other => Err(ConfigError::UnknownExperiment(other.to_string())),
        }
    }

    /// Render the fully resolved config (written into each run directory).
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "schema = {SCHEMA_VERSION}");
        let _ = writeln!(s, "experiment = {}", self.env.name());
        let seeds: Vec<String> = self.seeds.iter().map(|x| x.to_string()).collect();
        let _ = writeln!(s, "seeds = {}", seeds.join(","));
        if let Some(out) = &self.out {
            let _ = writeln!(s, "out = {out}");
        }
        let _ = writeln!(s, "\n[env]");
        match &self.env {
            EnvChoice::Toy(t) => {
                let _ = writeln!(s, "k = {}", t.k);
                let _ = writeln!(s, "gap_0 = {}", t.gaps[0]);
                let _ = writeln!(s, "gap_1 = {}", t.gaps[1]);
                let _ = writeln!(s, "boost_step = {}", t.boost_step);
            }
            EnvChoice::Conv(c) => {
                let _ = writeln!(s, "sigma_f = {}", c.sigma_f);
                let _ = writeln!(s, "construction_seed = {}", c.construction_seed);
            }
            EnvChoice::Ranking(r) => {
                let _ = writeln!(s, "groups = {}", r.groups);
                let _ = writeln!(s, "ranking_size = {}", r.ranking_size);
                let _ = writeln!(s, "n_items = {}", r.n_items);
                let _ = writeln!(s, "score_noise = {}", r.score_noise);
                let _ = writeln!(s, "boost = {}", r.boost);
                let _ = writeln!(s, "sigma_f = {}", r.sigma_f);
                let _ = writeln!(s, "construction_seed = {}", r.construction_seed);
            }
        }
        for (i, level) in self.levels.iter().enumerate() {
            // Level numbering is over env levels; builtin-micro envs start
            // their learned levels at 2.
            let first = if matches!(self.env, EnvChoice::Conv(_)) { 1 } else { 2 };
            let _ = writeln!(s, "\n[level{}]", first + i);
            let _ = writeln!(s, "samples = {}", level.samples);
            let hidden: Vec<String> = level.hidden.iter().map(|h| h.to_string()).collect();
            let _ = writeln!(s, "hidden = {}", hidden.join(","));
            let _ = writeln!(s, "beta = {}", level.beta);
            let _ = writeln!(s, "lr = {}", level.optimizer.learning_rate);
            let _ = writeln!(s, "batch = {}", level.optimizer.batch_size);
            let _ = writeln!(s, "epochs = {}", level.optimizer.epochs);
            let _ = writeln!(s, "weight_decay = {}", level.optimizer.weight_decay);
        }
        let _ = writeln!(s, "\n[baselines]");
        let _ = writeln!(s, "uniform = {}", self.baselines.uniform);
        let _ = writeln!(s, "fixed = {}", self.baselines.fixed);
        let _ = writeln!(s, "skyline = {}", self.baselines.skyline);
        let _ = writeln!(s, "micro_only = {}", self.baselines.micro_only);
        let _ = writeln!(s, "qlearning = {}", self.baselines.qlearning);
        let _ = writeln!(s, "\n[eval]");
        let _ = writeln!(s, "episodes = {}", self.eval_episodes);
        s
    }

    /// Parse and validate a config file.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut sections: BTreeMap<String, Vec<(String, String)>> = BTreeMap::new();
        let mut current = String::new(); // root section
        sections.insert(String::new(), Vec::new());
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.split('#').next().unwrap_or("").trim();
            if trimmed.is_empty() {
                continue;
            }
            if let Some(name) = trimmed.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or(ConfigError::Malformed {
                        line,
                        text: raw.to_string(),
                    })?
                    .trim()
                    .to_string();
                current = name.clone();
                sections.entry(name).or_default();
                continue;
            }
            let (key, value) = trimmed.split_once('=').ok_or(ConfigError::Malformed {
                line,
                text: raw.to_string(),
            })?;
            sections
                .get_mut(&current)
                .unwrap()
                .push((key.trim().to_string(), value.trim().to_string()));
        }

        let root = Section::new("", sections.remove("").unwrap_or_default());
        let schema: u32 = root.require("schema")?;
        if schema != SCHEMA_VERSION {
            return Err(ConfigError::SchemaVersion {
                got: schema,
                want: SCHEMA_VERSION,
            });
        }
        let experiment: String = root.require("experiment")?;
        let mut config = Self::default_for(&experiment)?;
        if let Some(seeds) = root.get::<String>("seeds")? {
            config.seeds = parse_list(&seeds, "seeds")?;
        }
        if let Some(out) = root.get::<String>("out")? {
            config.out = Some(out);
        }
        root.finish()?;

        if let Some(kvs) = sections.remove("env") {
            let env = Section::new("env", kvs);
            match &mut config.env {
                EnvChoice::Toy(t) => {
                    if let Some(k) = env.get("k")? {
                        t.k = k;
                    }
                    if let Some(g) = env.get("gap_0")? {
                        t.gaps[0] = g;
                    }
                    if let Some(g) = env.get("gap_1")? {
                        t.gaps[1] = g;
                    }
                    if let Some(b) = env.get("boost_step")? {
                        t.boost_step = b;
                    }
                }
                EnvChoice::Conv(c) => {
                    if let Some(v) = env.get("sigma_f")? {
                        c.sigma_f = v;
                    }
                    if let Some(v) = env.get("construction_seed")? {
                        c.construction_seed = v;
                    }
                }
                EnvChoice::Ranking(r) => {
                    if let Some(v) = env.get("groups")? {
                        r.groups = v;
                    }
                    if let Some(v) = env.get("ranking_size")? {
                        r.ranking_size = v;
                    }
                    if let Some(v) = env.get("n_items")? {
                        r.n_items = v;
                    }
                    if let Some(v) = env.get("score_noise")? {
                        r.score_noise = v;
                    }
                    if let Some(v) = env.get("boost")? {
                        r.boost = v;
                    }
                    if let Some(v) = env.get("sigma_f")? {
                        r.sigma_f = v;
                    }
                    if let Some(v) = env.get("construction_seed")? {
                        r.construction_seed = v;
                    }
                }
            }
            env.finish()?;
        }

        let first_level = if matches!(config.env, EnvChoice::Conv(_)) { 1 } else { 2 };
        for (i, level) in config.levels.iter_mut().enumerate() {
            let name = format!("level{}", first_level + i);
            if let Some(kvs) = sections.remove(&name) {
                let sec = Section::new(&name, kvs);
                if let Some(v) = sec.get("samples")? {
                    level.samples = v;
                }
                if let Some(h) = sec.get::<String>("hidden")? {
                    level.hidden = if h.is_empty() { vec![] } else { parse_list(&h, "hidden")? };
                }
                if let Some(v) = sec.get("beta")? {
                    level.beta = v;
                }
                if let Some(v) = sec.get("lr")? {
                    level.optimizer.learning_rate = v;
                }
                if let Some(v) = sec.get("batch")? {
                    level.optimizer.batch_size = v;
                }
                if let Some(v) = sec.get("epochs")? {
                    level.optimizer.epochs = v;
                }
                if let Some(v) = sec.get("weight_decay")? {
                    level.optimizer.weight_decay = v;
                }
                sec.finish()?;
            }
        }

        if let Some(kvs) = sections.remove("baselines") {
            let sec = Section::new("baselines", kvs);
            if let Some(v) = sec.get("uniform")? {
                config.baselines.uniform = v;
            }
            if let Some(v) = sec.get("fixed")? {
                config.baselines.fixed = v;
            }
            if let Some(v) = sec.get("skyline")? {
                config.baselines.skyline = v;
            }
            if let Some(v) = sec.get("micro_only")? {
                config.baselines.micro_only = v;
            }
            if let Some(v) = sec.get("qlearning")? {
                config.baselines.qlearning = v;
            }
            sec.finish()?;
        }
        if let Some(kvs) = sections.remove("eval") {
            let sec = Section::new("eval", kvs);
            if let Some(v) = sec.get("episodes")? {
                config.eval_episodes = v;
            }
            sec.finish()?;
        }
        if let Some((name, _)) = sections.into_iter().next() {
            return Err(ConfigError::UnknownSection { line: 0, section: name });
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.seeds.is_empty() {
            return Err(ConfigError::MissingKey {
                section: String::new(),
                key: "seeds".into(),
            });
        }
        if let EnvChoice::Toy(t) = &self.env {
            if !matches!(t.k, 2 | 4 | 6) {
                return Err(ConfigError::InvalidValue {
                    key: "k".into(),
                    value: t.k.to_string(),
                });
            }
        }
        if let EnvChoice::Ranking(r) = &self.env {
            if !(2..=5).contains(&r.groups) {
                return Err(ConfigError::InvalidValue {
                    key: "groups".into(),
                    value: r.groups.to_string(),
                });
            }
            if r.ranking_size > r.n_items {
                return Err(ConfigError::InvalidValue {
                    key: "ranking_size".into(),
                    value: r.ranking_size.to_string(),
                });
            }
        }
        for level in &self.levels {
            if level.samples == 0 || level.beta <= 0.0 {
                return Err(ConfigError::InvalidValue {
                    key: "levels".into(),
                    value: format!("samples={} beta={}", level.samples, level.beta),
                });
            }
        }
        Ok(())
    }
}

/// One config section with strict key tracking.
struct Section<'a> {
    name: &'a str,
    entries: Vec<(String, String)>,
    used: std::cell::RefCell<Vec<bool>>,
}

impl<'a> Section<'a> {
    fn new(name: &'a str, entries: Vec<(String, String)>) -> Self {
        let used = std::cell::RefCell::new(vec![false; entries.len()]);
        Self {
            name,
            entries,
            used,
        }
    }

    fn get<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError> {
        let mut found = None;
        for (i, (k, v)) in self.entries.iter().enumerate() {
            if k == key {
                self.used.borrow_mut()[i] = true;
                found = Some(v.clone());
            }
        }
        match found {
            None => Ok(None),
            Some(v) => v
                .parse::<T>()
                .map(Some)
                .map_err(|_| ConfigError::InvalidValue {
                    key: key.to_string(),
                    value: v,
                }),
        }
    }

    fn require<T: std::str::FromStr>(&self, key: &str) -> Result<T, ConfigError> {
        self.get(key)?.ok_or_else(|| ConfigError::MissingKey {
            section: self.name.to_string(),
            key: key.to_string(),
        })
    }

    /// Reject any keys nobody consumed.
    fn finish(&self) -> Result<(), ConfigError> {
        for (i, (k, _)) in self.entries.iter().enumerate() {
            if !self.used.borrow()[i] {
                return Err(ConfigError::UnknownKey {
                    section: self.name.to_string(),
                    key: k.clone(),
                });
            }
        }
        Ok(())
    }
}

fn parse_list<T: std::str::FromStr>(text: &str, key: &str) -> Result<Vec<T>, ConfigError> {
    text.split(',')
        .map(|p| p.trim())
        .filter(|p| !p.is_empty())
        .map(|p| {
            p.parse::<T>().map_err(|_| ConfigError::InvalidValue {
                key: key.to_string(),
                value: p.to_string(),
            })
        })
        .collect()
}
