//! Line-based `key = value` experiment configuration.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

/// Keys every subcommand understands.
pub const GLOBAL_KEYS: [&str; 6] = ["seed", "threads", "out", "budget", "level", "distribution"];

/// Subcommand-specific keys; which subcommand accepts which is decided by
/// the subcommand itself.
pub const SETTING_KEYS: [&str; 23] = [
    "method",
    "epsilons",
    "depth",
    "extra_depth",
    "iterations",
    "bins",
    "x_min",
    "x_max",
    "tolerance",
    "q",
    "stop",
    "horizon",
    "m",
    "plus",
    "eps",
    "eta",
    "x",
    "side",
    "m_walks",
    "a",
    "refine",
    "strategy_n_max",
    "strategy_budget",
];

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub threads: usize,
    pub out: Option<PathBuf>,
    pub budget: Option<u64>,
    pub level: Option<u32>,
    pub distribution: Option<String>,
    /// Subcommand-specific settings, raw.
    pub settings: BTreeMap<String, String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            threads: 1,
            out: None,
            budget: None,
            level: None,
            distribution: None,
            settings: BTreeMap::new(),
        }
    }
}

/// Every problem found in a config text, by line.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub problems: Vec<(usize, String)>,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (line, msg)) in self.problems.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "line {line}: {msg}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigError {}

impl ExperimentConfig {
    /// Sets one key, checking the value of global keys.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String> {
            value
                .parse()
                .map_err(|_| format!("`{key}` expects a number, got `{value}`"))
        }
        match key {
            "seed" => self.seed = num(key, value)?,
            "threads" => {
                self.threads = num(key, value)?;
                if self.threads == 0 {
                    return Err("`threads` must be at least 1".into());
                }
            }
            "out" => self.out = Some(PathBuf::from(value)),
            "budget" => self.budget = Some(num(key, value)?),
            "level" => self.level = Some(num(key, value)?),
            "distribution" => self.distribution = Some(value.to_string()),
            k if SETTING_KEYS.contains(&k) => {
                self.settings.insert(k.to_string(), value.to_string());
            }
            k => return Err(format!("unknown key `{k}`")),
        }
        Ok(())
    }
}

/// Parses `key = value` lines; `#` starts a comment, blank lines are skipped.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let mut config = ExperimentConfig::default();
    let mut problems = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            problems.push((line_no, format!("expected `key = value`, got `{line}`")));
            continue;
        };
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() {
            problems.push((line_no, "missing key".into()));
            continue;
        }
        if let Err(msg) = config.set(key, value) {
            problems.push((line_no, msg));
        }
    }
    if problems.is_empty() {
        Ok(config)
    } else {
        Err(ConfigError { problems })
    }
}
