//! Plain-text `key = value` run configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use hinet::data::Outcome;
use hinet::model::{HiNetConfig, TrainOptions, Variant};

use crate::CliError;

/// Every key a configuration may set.
pub const KEYS: &[&str] = &[
    "cohort",
    "checkpoint",
    "out",
    "outcome",
    "variant",
    "observation",
    "horizon",
    "forecast_shift",
    "bases",
    "filters",
    "hidden",
    "kernel",
    "dilations",
    "lambda",
    "dropout",
    "persistent_run",
    "seed",
    "split_seed",
    "batch_surgeries",
    "max_epochs",
    "patience",
    "learning_rate",
    "chunk_size",
    "lambda_grid",
    "alarms_labeled_only",
];

/// λ values searched by grid mode unless configured otherwise.
pub const DEFAULT_LAMBDA_GRID: [f64; 6] = [1e-4, 1e-3, 1e-2, 1e-1, 1e0, 1e1];

/// One source of settings, in the order they were written.
pub type Layer = Vec<(String, String)>;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub cohort: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub net: HiNetConfig,
    pub train: TrainOptions,
    pub split_seed: u64,
    /// Empty unless grid mode was requested.
    pub lambda_grid: Vec<f64>,
    pub alarms_labeled_only: bool,
}

fn usage(msg: String) -> CliError {
    CliError::Usage(msg)
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_text(text: &str, origin: &str) -> Result<Layer, CliError> {
    let mut layer = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| usage(format!("{origin}:{}: expected `key = value`, got `{line}`", n + 1)))?;
        let key = key.trim();
        check_key(key).map_err(|e| usage(format!("{origin}:{}: {e}", n + 1)))?;
        layer.push((key.to_string(), value.trim().to_string()));
    }
    Ok(layer)
}

pub fn read_file(path: &Path) -> Result<Layer, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
    parse_text(&text, &path.display().to_string())
}

fn check_key(key: &str) -> Result<(), String> {
    if KEYS.contains(&key) {
        Ok(())
    } else {
        Err(format!("unknown key `{key}`"))
    }
}

/// `key=value` from the command line.
pub fn parse_assignment(s: &str) -> Result<(String, String), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected key=value, got `{s}`"))?;
    let k = k.trim().replace('-', "_");
    check_key(&k)?;
    Ok((k, v.trim().to_string()))
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, CliError>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| usage(format!("bad value `{value}` for {key}: {e}")))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>, CliError>
where
    T::Err: std::fmt::Display,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

impl RunConfig {
    /// Applies `layers` in order over the outcome defaults; later layers win.
    pub fn resolve(layers: &[Layer]) -> Result<Self, CliError> {
        let entries: Vec<&(String, String)> = layers.iter().flatten().collect();
        let outcome = match entries.iter().rev().find(|(k, _)| k == "outcome") {
            Some((_, v)) => parse::<Outcome>("outcome", v)?,
            None => Outcome::General,
        };
        let mut cfg = RunConfig {
            cohort: None,
            checkpoint: None,
            out: None,
            net: HiNetConfig::for_outcome(outcome),
            train: TrainOptions::default(),
            split_seed: 1,
            lambda_grid: Vec::new(),
            alarms_labeled_only: false,
        };
        for (key, value) in entries {
            cfg.set(key, value)?;
        }
        cfg.net.validate().map_err(|e| usage(e.to_string()))?;
        cfg.train.validate().map_err(|e| usage(e.to_string()))?;
        if cfg.lambda_grid.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
            return Err(usage("lambda_grid values must be non-negative".into()));
        }
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let net = &mut self.net;
        let tr = &mut self.train;
        match key {
            "cohort" => self.cohort = path(value),
            "checkpoint" => self.checkpoint = path(value),
            "out" => self.out = path(value),
            "outcome" => net.outcome = parse(key, value)?,
            "variant" => net.variant = parse::<Variant>(key, value)?,
            "observation" => net.observation = parse(key, value)?,
            "horizon" => net.horizon = parse(key, value)?,
            "forecast_shift" => net.forecast_shift = parse(key, value)?,
            "bases" => net.bases = parse(key, value)?,
            "filters" => net.filters = parse(key, value)?,
            "hidden" => net.hidden = parse(key, value)?,
            "kernel" => net.kernel = parse(key, value)?,
            "dilations" => net.dilations = parse_list(key, value)?,
            "lambda" => net.lambda = parse(key, value)?,
            "dropout" => net.dropout = parse(key, value)?,
            "persistent_run" => net.persistent_run = parse(key, value)?,
            "seed" => net.seed = parse(key, value)?,
            "split_seed" => self.split_seed = parse(key, value)?,
            "batch_surgeries" => tr.batch_surgeries = parse(key, value)?,
            "max_epochs" => tr.max_epochs = parse(key, value)?,
            "patience" => tr.patience = parse(key, value)?,
            "learning_rate" => tr.learning_rate = parse(key, value)?,
            "chunk_size" => tr.chunk_size = parse(key, value)?,
            "lambda_grid" => {
                self.lambda_grid = match value {
                    "" | "none" => Vec::new(),
                    "default" => DEFAULT_LAMBDA_GRID.to_vec(),
                    _ => parse_list(key, value)?,
                }
            }
            "alarms_labeled_only" => self.alarms_labeled_only = parse(key, value)?,
            _ => return Err(usage(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Every key with its resolved value, readable back by [`parse_text`].
    pub fn to_text(&self) -> String {
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let list = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(",");
        let n = &self.net;
        let t = &self.train;
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("cohort", path(&self.cohort));
        put("checkpoint", path(&self.checkpoint));
        put("out", path(&self.out));
        put("outcome", n.outcome.to_string());
        put("variant", n.variant.to_string());
        put("observation", n.observation.to_string());
        put("horizon", n.horizon.to_string());
        put("forecast_shift", n.forecast_shift.to_string());
        put("bases", n.bases.to_string());
        put("filters", n.filters.to_string());
        put("hidden", n.hidden.to_string());
        put("kernel", n.kernel.to_string());
        put("dilations", n.dilations.iter().map(usize::to_string).collect::<Vec<_>>().join(","));
        put("lambda", n.lambda.to_string());
        put("dropout", n.dropout.to_string());
        put("persistent_run", n.persistent_run.to_string());
        put("seed", n.seed.to_string());
        put("split_seed", self.split_seed.to_string());
        put("batch_surgeries", t.batch_surgeries.to_string());
        put("max_epochs", t.max_epochs.to_string());
        put("patience", t.patience.to_string());
        put("learning_rate", t.learning_rate.to_string());
        put("chunk_size", t.chunk_size.to_string());
        put("lambda_grid", list(&self.lambda_grid));
        put("alarms_labeled_only", self.alarms_labeled_only.to_string());
        s
    }
}
