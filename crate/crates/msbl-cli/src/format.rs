//! File formats: logged datasets, serialized policies, result tables.
//!
//! All reals are written with 17 significant digits so round-trips are
//! bit-exact; all files are UTF-8 CSV-like text with '.' decimal separators.
//! Writers go through a temp file + rename so partially written artifacts
//! never appear under their final name.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use msbl_core::data::{ContextSample, LoggedDataset, LoggedInteraction};
use msbl_core::net::{NetworkSpec, ScoringNet};
use msbl_core::policy::{
    FamilyMode, MacroAction, MacroActionKind, PolicyFamily, ScoreTransform, SoftmaxPolicy,
};

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> FormatError + '_ {
    move |source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> FormatError {
    FormatError::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// 17-significant-digit rendering (lossless for f64).
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Atomic text file write (temp file + rename).
pub fn write_atomic(path: &Path, contents: &str) -> Result<(), FormatError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(path))?;
    }
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
        f.write_all(contents.as_bytes()).map_err(io_err(&tmp))?;
        f.sync_all().map_err(io_err(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(io_err(path))?;
    Ok(())
}

/// Serialize a logged dataset:
/// header `level,n,context_dim,action_count,logging_policy_id`, then one row
/// `ctx_0..ctx_{d-1},action,reward,propensity[,rc_0..rc_{m-1}]` per
/// interaction.
pub fn dataset_to_string(data: &LoggedDataset, action_count: usize) -> String {
    let context_dim = data
        .interactions
        .first()
        .map(|it| it.context.features.len())
        .unwrap_or(0);
    let mut s = format!(
        "{},{},{},{},{}\n",
        data.level_index,
        data.len(),
        context_dim,
        action_count,
        data.logging_policy_id
    );
    for it in &data.interactions {
        let mut fields: Vec<String> = it.context.features.iter().map(|v| fmt_f64(*v)).collect();
        fields.push(it.action_index.to_string());
        fields.push(fmt_f64(it.reward));
        fields.push(fmt_f64(it.propensity));
        for rc in &it.reward_components {
            fields.push(fmt_f64(*rc));
        }
        s.push_str(&fields.join(","));
        s.push('\n');
    }
    s
}

pub fn write_dataset(
    path: &Path,
    data: &LoggedDataset,
    action_count: usize,
) -> Result<(), FormatError> {
    write_atomic(path, &dataset_to_string(data, action_count))
}

/// Parse a dataset file; returns the dataset and its declared action count.
pub fn read_dataset(path: &Path) -> Result<(LoggedDataset, usize), FormatError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(path, 1, "empty file"))?;
    let head: Vec<&str> = header.split(',').collect();
    if head.len() != 5 {
        return Err(parse_err(path, 1, "header needs 5 fields"));
    }
    let level: u32 = head[0]
        .parse()
        .map_err(|_| parse_err(path, 1, "bad level"))?;
    let n: usize = head[1].parse().map_err(|_| parse_err(path, 1, "bad n"))?;
    let context_dim: usize = head[2]
        .parse()
        .map_err(|_| parse_err(path, 1, "bad context_dim"))?;
    let action_count: usize = head[3]
        .parse()
        .map_err(|_| parse_err(path, 1, "bad action_count"))?;
    let mut data = LoggedDataset::new(level, head[4]);
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < context_dim + 3 {
            return Err(parse_err(path, idx + 1, "too few fields"));
        }
        let mut features = Vec::with_capacity(context_dim);
        for f in &fields[..context_dim] {
            features.push(
                f.parse::<f64>()
                    .map_err(|_| parse_err(path, idx + 1, "bad feature"))?,
            );
        }
        let action_index: usize = fields[context_dim]
            .parse()
            .map_err(|_| parse_err(path, idx + 1, "bad action"))?;
        let reward: f64 = fields[context_dim + 1]
            .parse()
            .map_err(|_| parse_err(path, idx + 1, "bad reward"))?;
        let propensity: f64 = fields[context_dim + 2]
            .parse()
            .map_err(|_| parse_err(path, idx + 1, "bad propensity"))?;
        let mut reward_components = Vec::new();
        for f in &fields[context_dim + 3..] {
            reward_components.push(
                f.parse::<f64>()
                    .map_err(|_| parse_err(path, idx + 1, "bad component"))?,
            );
        }
        data.interactions.push(LoggedInteraction {
            context: ContextSample::new(level, features),
            action_index,
            reward,
            reward_components,
            propensity,
        });
    }
    if data.len() != n {
        return Err(parse_err(path, 1, format!("expected {n} rows, got {}", data.len())));
    }
    Ok((data, action_count))
}

fn transform_to_string(t: &ScoreTransform) -> String {
    match t {
        ScoreTransform::Identity => "identity".to_string(),
        ScoreTransform::Temperature(tau) => format!("temperature,{}", fmt_f64(*tau)),
        ScoreTransform::Boost { delta, targets } => {
            let ts: Vec<String> = targets.iter().map(|t| t.to_string()).collect();
            format!("boost,{},{}", fmt_f64(*delta), ts.join(";"))
        }
    }
}

fn transform_from_str(path: &Path, line: usize, s: &str) -> Result<ScoreTransform, FormatError> {
    let parts: Vec<&str> = s.split(',').collect();
    match parts[0] {
        "identity" => Ok(ScoreTransform::Identity),
        "temperature" => Ok(ScoreTransform::Temperature(
            parts
                .get(1)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| parse_err(path, line, "bad temperature"))?,
        )),
        "boost" => {
            let delta: f64 = parts
                .get(1)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| parse_err(path, line, "bad boost"))?;
            let targets = parts
                .get(2)
                .map(|t| {
                    t.split(';')
                        .filter(|x| !x.is_empty())
                        .map(|x| x.parse::<usize>())
                        .collect::<Result<Vec<_>, _>>()
                })
                .transpose()
                .map_err(|_| parse_err(path, line, "bad boost targets"))?
                .unwrap_or_default();
            Ok(ScoreTransform::Boost { delta, targets })
        }
        other => Err(parse_err(path, line, format!("unknown transform {other}"))),
    }
}

/// Serialize one softmax policy: a header with the action count, inverse
/// temperature, conditional dim and architecture, the score transform, then
/// the flat parameter vector (one value per line).
pub fn policy_to_string(policy: &SoftmaxPolicy) -> String {
    let spec = &policy.net.spec;
    let mut arch: Vec<String> = vec![spec.input_dim.to_string()];
    arch.extend(spec.hidden_dims.iter().map(|h| h.to_string()));
    arch.push(spec.output_dim.to_string());
    let mut s = String::from("action_count,beta,conditional_dim,arch\n");
    s.push_str(&format!(
        "{},{},{},{}\n",
        spec.output_dim,
        fmt_f64(policy.inverse_temperature),
        policy.conditional_dim,
        arch.join("x"),
    ));
    s.push_str(&format!("transform,{}\n", transform_to_string(&policy.transform)));
    s.push_str(&format!("params,{}\n", policy.net.params.len()));
    for p in &policy.net.params {
        s.push_str(&fmt_f64(*p));
        s.push('\n');
    }
    s
}

pub fn write_policy(path: &Path, policy: &SoftmaxPolicy) -> Result<(), FormatError> {
    write_atomic(path, &policy_to_string(policy))
}

pub fn read_policy(path: &Path) -> Result<SoftmaxPolicy, FormatError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let lines: Vec<&str> = text.lines().collect();
    if lines.len() < 4 {
        return Err(parse_err(path, 1, "truncated policy file"));
    }
    let head: Vec<&str> = lines[1].split(',').collect();
    if head.len() != 4 {
        return Err(parse_err(path, 2, "header needs 4 fields"));
    }
    let beta: f64 = head[1]
        .parse()
        .map_err(|_| parse_err(path, 2, "bad beta"))?;
    let conditional_dim: usize = head[2]
        .parse()
        .map_err(|_| parse_err(path, 2, "bad conditional_dim"))?;
    let dims: Vec<usize> = head[3]
        .split('x')
        .map(|d| d.parse::<usize>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|_| parse_err(path, 2, "bad arch"))?;
    if dims.len() < 2 {
        return Err(parse_err(path, 2, "arch needs at least input and output"));
    }
    let spec = NetworkSpec::new(
        dims[0],
        dims[1..dims.len() - 1].to_vec(),
        dims[dims.len() - 1],
    );
    let transform = {
        let t = lines[2]
            .strip_prefix("transform,")
            .ok_or_else(|| parse_err(path, 3, "expected transform line"))?;
        transform_from_str(path, 3, t)?
    };
    let n_params: usize = lines[3]
        .strip_prefix("params,")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| parse_err(path, 4, "expected params line"))?;
    if lines.len() < 4 + n_params {
        return Err(parse_err(path, 4, "truncated parameter block"));
    }
    let mut params = Vec::with_capacity(n_params);
    for (i, line) in lines[4..4 + n_params].iter().enumerate() {
        params.push(
            line.parse::<f64>()
                .map_err(|_| parse_err(path, 5 + i, "bad parameter"))?,
        );
    }
    let net = ScoringNet::new(spec, params)
        .map_err(|e| parse_err(path, 4, format!("parameter count mismatch: {e}")))?;
    let mut policy = if conditional_dim > 0 {
        SoftmaxPolicy::new_conditional(net, beta, conditional_dim)
    } else {
        SoftmaxPolicy::new(net, beta)
    };
    policy.transform = transform;
    Ok(policy)
}

fn macro_action_to_string(m: &MacroAction) -> String {
    match &m.kind {
        MacroActionKind::TemperatureMod { tau } => {
            format!("{},temperature,{}", m.index, fmt_f64(*tau))
        }
        MacroActionKind::BoostMod { boost, target_set } => {
            let ts: Vec<String> = target_set.iter().map(|t| t.to_string()).collect();
            format!("{},boost,{},{}", m.index, fmt_f64(*boost), ts.join(";"))
        }
        MacroActionKind::FeedbackWeights { weights } => {
            let ws: Vec<String> = weights.iter().map(|w| fmt_f64(*w)).collect();
            format!("{},weights,{}", m.index, ws.join(";"))
        }
    }
}

fn macro_action_from_line(path: &Path, line_no: usize, line: &str) -> Result<MacroAction, FormatError> {
    let parts: Vec<&str> = line.split(',').collect();
    if parts.len() < 2 {
        return Err(parse_err(path, line_no, "macro action needs index,kind"));
    }
    let index: usize = parts[0]
        .parse()
        .map_err(|_| parse_err(path, line_no, "bad index"))?;
    match parts[1] {
        "temperature" => {
            let tau: f64 = parts
                .get(2)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| parse_err(path, line_no, "bad tau"))?;
            Ok(MacroAction::temperature(index, tau))
        }
        "boost" => {
            let boost: f64 = parts
                .get(2)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| parse_err(path, line_no, "bad boost"))?;
            let targets: Vec<usize> = parts
                .get(3)
                .map(|t| {
                    t.split(';')
                        .filter(|x| !x.is_empty())
                        .map(|x| x.parse::<usize>())
                        .collect::<Result<Vec<_>, _>>()
                })
                .transpose()
                .map_err(|_| parse_err(path, line_no, "bad targets"))?
                .unwrap_or_default();
            Ok(MacroAction::boost(index, boost, targets))
        }
        "weights" => {
            let weights: Vec<f64> = parts
                .get(2)
                .map(|t| {
                    t.split(';')
                        .filter(|x| !x.is_empty())
                        .map(|x| x.parse::<f64>())
                        .collect::<Result<Vec<_>, _>>()
                })
                .transpose()
                .map_err(|_| parse_err(path, line_no, "bad weights"))?
                .unwrap_or_default();
            Ok(MacroAction::weights(index, weights))
        }
        other => Err(parse_err(path, line_no, format!("unknown kind {other}"))),
    }
}

/// Serialize a policy family into a directory: `base.policy` plus
/// `macro_actions.csv` (`mode` header line, then one action per line).
pub fn write_family(dir: &Path, family: &PolicyFamily) -> Result<(), FormatError> {
    write_policy(&dir.join("base.policy"), &family.base)?;
    let mut s = format!(
        "mode,{}\n",
        match family.mode {
            FamilyMode::PolicyModification => "policy_modification",
            FamilyMode::FeedbackModification => "feedback_modification",
        }
    );
    for m in &family.macro_actions {
        s.push_str(&macro_action_to_string(m));
        s.push('\n');
    }
    write_atomic(&dir.join("macro_actions.csv"), &s)
}

pub fn read_family(dir: &Path) -> Result<PolicyFamily, FormatError> {
    let base = read_policy(&dir.join("base.policy"))?;
    let actions_path = dir.join("macro_actions.csv");
    let text = fs::read_to_string(&actions_path).map_err(io_err(&actions_path))?;
    let mut lines = text.lines().enumerate();
    let (_, mode_line) = lines
        .next()
        .ok_or_else(|| parse_err(&actions_path, 1, "empty file"))?;
    let mode = match mode_line.strip_prefix("mode,") {
        Some("policy_modification") => FamilyMode::PolicyModification,
        Some("feedback_modification") => FamilyMode::FeedbackModification,
        _ => return Err(parse_err(&actions_path, 1, "bad mode line")),
    };
    let mut macro_actions = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        macro_actions.push(macro_action_from_line(&actions_path, idx + 1, line)?);
    }
    PolicyFamily::new(base, macro_actions, mode)
        .map_err(|e| parse_err(&actions_path, 1, format!("invalid family: {e}")))
}

/// One results.csv row. Wall-clock is tracked per run in summary.json, not
/// here, so identical config+seed reruns produce byte-identical tables.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub experiment: String,
    pub seed: u64,
    pub policy: String,
    pub level: u32,
    pub mean_reward: f64,
    pub std_error: f64,
    pub episodes: usize,
}

pub const RESULTS_HEADER: &str = "experiment,seed,policy,level,mean_reward,std_error,episodes";

pub fn results_to_string(rows: &[ResultRow]) -> String {
    let mut s = String::from(RESULTS_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.experiment,
            r.seed,
            r.policy,
            r.level,
            fmt_f64(r.mean_reward),
            fmt_f64(r.std_error),
            r.episodes
        ));
    }
    s
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>, FormatError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut rows = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if idx == 0 || line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            return Err(parse_err(path, idx + 1, "expected 7 fields"));
        }
        rows.push(ResultRow {
            experiment: f[0].to_string(),
            seed: f[1].parse().map_err(|_| parse_err(path, idx + 1, "seed"))?,
            policy: f[2].to_string(),
            level: f[3].parse().map_err(|_| parse_err(path, idx + 1, "level"))?,
            mean_reward: f[4].parse().map_err(|_| parse_err(path, idx + 1, "mean"))?,
            std_error: f[5].parse().map_err(|_| parse_err(path, idx + 1, "se"))?,
            episodes: f[6].parse().map_err(|_| parse_err(path, idx + 1, "episodes"))?,
        });
    }
    Ok(rows)
}

/// Minimal JSON emitter for the summary file (keys are ours, values are
/// numbers/strings; deterministic ordering).
pub enum Json {
    Num(f64),
    Int(i64),
    Str(String),
    Arr(Vec<Json>),
    Obj(Vec<(String, Json)>),
}

impl Json {
    pub fn render(&self) -> String {
        let mut out = String::new();
        self.write(&mut out, 0);
        out
    }

    fn write(&self, out: &mut String, indent: usize) {
        match self {
            Json::Num(v) => {
                if v.is_finite() {
                    out.push_str(&format!("{v}"));
                } else {
                    out.push_str("null");
                }
            }
            Json::Int(v) => out.push_str(&v.to_string()),
            Json::Str(s) => {
                out.push('"');
                for c in s.chars() {
                    match c {
                        '"' => out.push_str("\\\""),
                        '\\' => out.push_str("\\\\"),
                        '\n' => out.push_str("\\n"),
                        c => out.push(c),
                    }
                }
                out.push('"');
            }
            Json::Arr(items) => {
                out.push('[');
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        out.push_str(", ");
                    }
                    item.write(out, indent);
                }
                out.push(']');
            }
            Json::Obj(fields) => {
                out.push_str("{\n");
                let pad = "  ".repeat(indent + 1);
                for (i, (k, v)) in fields.iter().enumerate() {
                    out.push_str(&pad);
                    out.push('"');
                    out.push_str(k);
                    out.push_str("\": ");
                    v.write(out, indent + 1);
                    if i + 1 < fields.len() {
                        out.push(',');
                    }
                    out.push('\n');
                }
                out.push_str(&"  ".repeat(indent));
                out.push('}');
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use msbl_core::rng::RngStream;

    #[test]
    fn dataset_round_trip_is_field_identical() {
        let mut rng = RngStream::new(3);
        let mut data = LoggedDataset::new(2, "uniform");
        for i in 0..25 {
            data.interactions.push(LoggedInteraction {
                context: ContextSample::new(2, vec![rng.next_f64() * 3.0 - 1.5, rng.next_normal()]),
                action_index: i % 4,
                reward: rng.next_f64(),
                reward_components: if i % 2 == 0 {
                    vec![rng.next_f64(), rng.next_f64()]
                } else {
                    vec![rng.next_f64(), rng.next_f64()]
                },
                propensity: 0.25,
            });
        }
        let dir = std::env::temp_dir().join(format!("msbl-fmt-{}", std::process::id()));
        let path = dir.join("d.csv");
        write_dataset(&path, &data, 4).unwrap();
        let (loaded, action_count) = read_dataset(&path).unwrap();
        assert_eq!(action_count, 4);
        assert_eq!(data, loaded);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn policy_round_trip_is_bit_identical() {
        let mut rng = RngStream::new(11);
        let spec = NetworkSpec::new(3, vec![5], 4);
        let net = ScoringNet::init(spec, &mut rng);
        let mut policy = SoftmaxPolicy::new_conditional(net, 0.8, 0.max(2));
        policy.transform = ScoreTransform::Boost {
            delta: 0.5,
            targets: vec![1, 3],
        };
        let dir = std::env::temp_dir().join(format!("msbl-fmt2-{}", std::process::id()));
        let path = dir.join("p.policy");
        write_policy(&path, &policy).unwrap();
        let loaded = read_policy(&path).unwrap();
        assert_eq!(policy, loaded);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn family_round_trip() {
        let mut rng = RngStream::new(13);
        let spec = NetworkSpec::new(2, vec![], 3);
        let base = SoftmaxPolicy::new(ScoringNet::init(spec, &mut rng), 1.0);
        let family = PolicyFamily::new(
            base,
            vec![
                MacroAction::temperature(0, 0.0),
                MacroAction::temperature(1, 0.5),
                MacroAction::boost(2, 0.3, vec![0, 2]),
            ],
            FamilyMode::PolicyModification,
        )
        .unwrap();
        let dir = std::env::temp_dir().join(format!("msbl-fmt3-{}", std::process::id()));
        write_family(&dir, &family).unwrap();
        let loaded = read_family(&dir).unwrap();
        assert_eq!(family, loaded);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn results_round_trip_and_stable_header() {
        let rows = vec![ResultRow {
            experiment: "toy".into(),
            seed: 3,
            policy: "msbl".into(),
            level: 2,
            mean_reward: 0.987654321,
            std_error: 0.001,
            episodes: 500,
        }];
        let text = results_to_string(&rows);
        assert!(text.starts_with(RESULTS_HEADER));
        let dir = std::env::temp_dir().join(format!("msbl-fmt4-{}", std::process::id()));
        let path = dir.join("results.csv");
        write_atomic(&path, &text).unwrap();
        let loaded = read_results(&path).unwrap();
        assert_eq!(rows, loaded);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn json_rendering_is_deterministic() {
        let j = Json::Obj(vec![
            ("name".into(), Json::Str("run".into())),
            ("value".into(), Json::Num(0.5)),
            ("seeds".into(), Json::Arr(vec![Json::Int(1), Json::Int(2)])),
        ]);
        assert_eq!(j.render(), j.render());
        assert!(j.render().contains("\"seeds\": [1, 2]"));
    }
}
