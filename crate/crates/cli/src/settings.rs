//! Run settings. The same struct serves as the parsed command line, the
//! config file and the fully resolved run configuration that is embedded in
//! every summary, so a summary can be fed back with `--config` to replay a run.

use std::path::{Path, PathBuf};

use mda_core::bounds::{BoundConstants, TraceGram};
use mda_core::data::Preprocess;
use mda_core::harness::Grid;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Gen,
    Fit,
    Transform,
    Eval,
    Sweep,
    Bounds,
    Project,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Gen => "gen",
            Command::Fit => "fit",
            Command::Transform => "transform",
            Command::Eval => "eval",
            Command::Sweep => "sweep",
            Command::Bounds => "bounds",
            Command::Project => "project",
        }
    }

    /// Keys that mean something for this command. Everything else is dropped
    /// from the resolved configuration.
    fn keys(self) -> &'static [&'static str] {
        match self {
            Command::Gen => &["seed", "threads", "verbose", "summary", "out", "preset", "spec", "prior"],
            Command::Fit => &[
                "threads", "verbose", "summary", "out", "train", "domain_column", "label_column", "sigma",
                "sigma_multiplier", "beta", "alpha", "gamma", "epsilon", "components", "energy", "preprocess",
                "center_before_scatter", "scale_train",
            ],
            Command::Transform => &[
                "threads", "verbose", "summary", "out", "model", "data", "domain_column", "label_column",
                "no_labels",
            ],
            Command::Project => &["threads", "verbose", "summary", "out", "model"],
            Command::Eval => &[
                "threads", "verbose", "summary", "model", "data", "domain_column", "label_column", "with_bounds",
                "lipschitz_loss", "loss_bound", "kernel_bound_x", "kernel_bound_x_prime", "kernel_bound_gamma",
                "lipschitz_feature_map", "delta",
            ],
            Command::Sweep => &[
                "seed", "threads", "verbose", "summary", "out", "model_out", "train", "preset", "spec", "prior",
                "domain_column", "label_column", "grid", "protocol", "target_domain", "folds", "held_out",
                "preprocess", "center_before_scatter", "scale_train", "lipschitz_loss", "loss_bound",
                "kernel_bound_x", "kernel_bound_x_prime", "kernel_bound_gamma", "lipschitz_feature_map", "delta",
            ],
            Command::Bounds => &[
                "threads", "verbose", "summary", "model", "tr_bkb", "n", "m", "n_bar", "trace_gram",
                "lipschitz_loss", "loss_bound", "kernel_bound_x", "kernel_bound_x_prime", "kernel_bound_gamma",
                "lipschitz_feature_map", "delta",
            ],
        }
    }
}

/// `"median"` or a fixed bandwidth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Sigma {
    Value(f64),
    Keyword(String),
}

impl std::str::FromStr for Sigma {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "median" {
            return Ok(Sigma::Keyword(s.to_string()));
        }
        s.parse::<f64>()
            .map(Sigma::Value)
            .map_err(|_| format!("expected \"median\" or a number, got {s:?}"))
    }
}

/// A named grid, a path to a JSON grid file, or an inline grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GridSpec {
    Inline(Grid),
    Named(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    /// Train on sources, select on one target draw, test on another.
    Synthetic,
    /// Stratified k-fold on the sources.
    Kfold,
    /// Leave-domains-out with source k-fold selection.
    LeaveOut,
}

/// Class proportions for one generated domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorShift {
    pub domain: String,
    pub prior: Vec<f64>,
    pub total: usize,
}

impl std::str::FromStr for PriorShift {
    type Err = String;

    /// `DOMAIN:P1,P2,...[@TOTAL]`
    fn from_str(s: &str) -> Result<Self, String> {
        let (domain, rest) = s
            .split_once(':')
            .ok_or_else(|| format!("expected DOMAIN:P1,P2,..[@TOTAL], got {s:?}"))?;
        let (probs, total) = match rest.split_once('@') {
            Some((p, t)) => (p, Some(t.parse::<usize>().map_err(|e| format!("total: {e}"))?)),
            None => (rest, None),
        };
        let prior = probs
            .split(',')
            .map(|p| p.trim().parse::<f64>().map_err(|e| format!("prior entry {p:?}: {e}")))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(PriorShift {
            domain: domain.to_string(),
            prior,
            // 0 stands for "keep the domain's current size"
            total: total.unwrap_or(0),
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub command: Option<Command>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verbose: Option<u8>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub summary: Option<PathBuf>,

    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model_out: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train: Option<Vec<PathBuf>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<Vec<PathBuf>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub domain_column: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label_column: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub no_labels: Option<bool>,

    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spec: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prior: Option<PriorShift>,

    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<Sigma>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_multiplier: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub components: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub energy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preprocess: Option<Preprocess>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub center_before_scatter: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scale_train: Option<bool>,

    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub protocol: Option<Protocol>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target_domain: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub folds: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub held_out: Option<usize>,

    #[serde(skip_serializing_if = "Option::is_none")]
    pub with_bounds: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace_gram: Option<TraceGram>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tr_bkb: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_bar: Option<f64>,

    #[serde(skip_serializing_if = "Option::is_none")]
    pub lipschitz_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss_bound: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kernel_bound_x: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kernel_bound_x_prime: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kernel_bound_gamma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lipschitz_feature_map: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
}

/// Groups of keys that are overridden as a whole: a layer that sets any key
/// of a group hides every key of that group in lower layers.
const GROUPS: [&[&str]; 3] = [
    &["train", "preset", "spec"],
    &["components", "energy"],
    &["model", "tr_bkb", "n", "m", "n_bar"],
];

fn to_map(s: &Settings) -> Map<String, Value> {
    match serde_json::to_value(s).expect("settings serialize") {
        Value::Object(map) => map,
        _ => unreachable!("settings serialize to an object"),
    }
}

fn from_map(map: Map<String, Value>) -> Result<Settings, CliError> {
    serde_json::from_value(Value::Object(map)).map_err(|e| CliError::Usage(format!("invalid configuration: {e}")))
}

fn check_exclusive(map: &Map<String, Value>, layer: &str) -> Result<(), CliError> {
    let exclusive: [&[&str]; 2] = [&["train", "preset", "spec"], &["components", "energy"]];
    for group in exclusive {
        let set: Vec<&str> = group.iter().copied().filter(|k| map.contains_key(*k)).collect();
        if set.len() > 1 {
            return Err(CliError::Usage(format!(
                "conflicting {layer} settings: {}",
                set.iter().map(|k| format!("--{}", k.replace('_', "-"))).collect::<Vec<_>>().join(" and ")
            )));
        }
    }
    if map.contains_key("model") && ["tr_bkb", "n", "m", "n_bar"].iter().any(|k| map.contains_key(*k)) {
        return Err(CliError::Usage(format!(
            "conflicting {layer} settings: --model and explicit bound inputs"
        )));
    }
    Ok(())
}

/// Reads a config file. A summary written by an earlier run is accepted as
/// well; its embedded run configuration is used.
pub fn read_config(path: &Path) -> Result<Settings, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config file {}: {e}", path.display())))?;
    let value: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("invalid config file {}: {e}", path.display())))?;
    let value = match value {
        Value::Object(mut map) if map.contains_key("run_config") => map.remove("run_config").expect("checked"),
        other => other,
    };
    serde_json::from_value(value).map_err(|e| CliError::Usage(format!("invalid config file {}: {e}", path.display())))
}

fn available_threads() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// Built-in defaults for a command.
pub fn defaults(command: Command) -> Settings {
    let c = BoundConstants::default();
    let mut s = Settings {
        command: Some(command),
        seed: Some(0),
        threads: Some(available_threads()),
        verbose: Some(0),
        domain_column: Some("domain".into()),
        label_column: Some("label".into()),
        no_labels: Some(false),
        sigma: Some(Sigma::Keyword("median".into())),
        sigma_multiplier: Some(1.0),
        beta: Some(0.5),
        alpha: Some(1.0),
        gamma: Some(1.0),
        epsilon: Some(mda_core::eigsolver::DEFAULT_EPSILON),
        energy: Some(0.96),
        preprocess: Some(Preprocess::DomainZscore),
        center_before_scatter: Some(false),
        scale_train: Some(true),
        grid: Some(GridSpec::Named("reduced".into())),
        folds: Some(5),
        held_out: Some(1),
        with_bounds: Some(false),
        trace_gram: Some(TraceGram::Centered),
        lipschitz_loss: Some(c.lipschitz_loss),
        loss_bound: Some(c.loss_bound),
        kernel_bound_x: Some(c.kernel_bound_x),
        kernel_bound_x_prime: Some(c.kernel_bound_x_prime),
        kernel_bound_gamma: Some(c.kernel_bound_gamma),
        lipschitz_feature_map: Some(c.lipschitz_feature_map),
        delta: Some(c.delta),
        ..Settings::default()
    };
    if matches!(command, Command::Gen | Command::Sweep) {
        s.preset = Some("table2".into());
    }
    s
}

/// Merges layers from highest to lowest precedence and keeps only the keys
/// that belong to `command`.
pub fn resolve(command: Command, layers: &[(&str, Settings)]) -> Result<Settings, CliError> {
    let mut merged = Map::new();
    let mut claimed: Vec<usize> = Vec::new();
    for (name, layer) in layers {
        if let Some(c) = layer.command {
            if c != command {
                return Err(CliError::Usage(format!(
                    "{name} is for command {:?}, not {:?}",
                    c.name(),
                    command.name()
                )));
            }
        }
        let mut map = to_map(layer);
        map.retain(|k, _| command.keys().contains(&k.as_str()));
        check_exclusive(&map, name)?;
        let mut newly = Vec::new();
        for (g, group) in GROUPS.iter().enumerate() {
            if claimed.contains(&g) {
                map.retain(|k, _| !group.contains(&k.as_str()));
            } else if group.iter().any(|k| map.contains_key(*k)) {
                newly.push(g);
            }
        }
        claimed.extend(newly);
        for (k, v) in map {
            merged.entry(k).or_insert(v);
        }
    }
    merged.insert("command".into(), serde_json::to_value(command).expect("command"));
    from_map(merged)
}

pub fn constants(s: &Settings) -> BoundConstants {
    let d = BoundConstants::default();
    BoundConstants {
        lipschitz_loss: s.lipschitz_loss.unwrap_or(d.lipschitz_loss),
        loss_bound: s.loss_bound.unwrap_or(d.loss_bound),
        kernel_bound_x: s.kernel_bound_x.unwrap_or(d.kernel_bound_x),
        kernel_bound_x_prime: s.kernel_bound_x_prime.unwrap_or(d.kernel_bound_x_prime),
        kernel_bound_gamma: s.kernel_bound_gamma.unwrap_or(d.kernel_bound_gamma),
        lipschitz_feature_map: s.lipschitz_feature_map.unwrap_or(d.lipschitz_feature_map),
        delta: s.delta.unwrap_or(d.delta),
    }
}
