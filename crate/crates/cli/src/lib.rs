//! Command-line experiment runner.

mod commands;
mod config;

use std::fs;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use sha2::{Digest, Sha256};

pub use config::{parse_config, ConfigError, ExperimentConfig, GLOBAL_KEYS, SETTING_KEYS};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INTERNAL: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DEGENERATE: i32 = 3;
pub const EXIT_RESOURCE: i32 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "branchtail",
    version,
    about = "Small-value probability experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Offspring law, e.g. "pmf: 1:0.5, 2:0.5" or "geometric: 0.5".
    #[arg(long, global = true)]
    dist: Option<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// CSV destination; standard output when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    level: Option<u32>,
    #[arg(long, global = true)]
    budget: Option<u64>,
    /// `key = value` file; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Tail method for gw-tail.
    #[arg(long, global = true)]
    method: Option<String>,
    /// Any other setting, as KEY=VALUE.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Branching parameters and regime of an offspring law.
    Params,
    /// Offspring law of the surviving-line tree.
    Prune,
    /// Density of the martingale limit by fixed-point iteration.
    GwDensity,
    /// Lower tail of the martingale limit.
    GwTail,
    /// Mean local-time profile of exit walks.
    BmGreen,
    /// Lower tail of a mutual intersection local time.
    IltTail,
    /// Lower tail of a self-intersection local time.
    SiltTail,
    /// Range disjointness of walks started near the origin.
    Disjoint,
    /// Brownian scaling of the intersection local time.
    ScalingCheck,
    /// Exit-time tails of several walks.
    ExitTails,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Params => "params",
            Command::Prune => "prune",
            Command::GwDensity => "gw-density",
            Command::GwTail => "gw-tail",
            Command::BmGreen => "bm-green",
            Command::IltTail => "ilt-tail",
            Command::SiltTail => "silt-tail",
            Command::Disjoint => "disjoint",
            Command::ScalingCheck => "scaling-check",
            Command::ExitTails => "exit-tails",
        }
    }
}

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Library(branchtail::Error),
    Io(std::io::Error),
    Internal(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Library(e) => write!(f, "{e}"),
            CliError::Io(e) => write!(f, "i/o error: {e}"),
            CliError::Internal(m) => write!(f, "internal error: {m}"),
        }
    }
}

impl From<branchtail::Error> for CliError {
    fn from(e: branchtail::Error) -> Self {
        CliError::Library(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use branchtail::Error as E;
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Library(e) => match e {
                E::InvalidArgument(_)
                | E::OutOfRange { .. }
                | E::InvalidRegime { .. }
                | E::LevelMismatch(..) => EXIT_CONFIG,
                E::DegenerateInput(_)
                | E::DegenerateDistribution(_)
                | E::BoettcherDegenerate { .. } => EXIT_DEGENERATE,
                E::ResourceLimit(_) => EXIT_RESOURCE,
                _ => EXIT_INTERNAL,
            },
            CliError::Io(_) | CliError::Internal(_) => EXIT_INTERNAL,
        }
    }
}

/// CSV body and a human-readable summary of one experiment.
pub struct Outcome {
    pub csv: String,
    pub summary: String,
}

/// Resolves flags over the config file.
fn resolve(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let mut config = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
            parse_config(&text)
                .map_err(|e| CliError::Config(format!("{}:\n{e}", path.display())))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(v) = cli.seed {
        config.seed = v;
    }
    if let Some(v) = cli.threads {
        if v == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        config.threads = v;
    }
    if let Some(v) = &cli.out {
        config.out = Some(v.clone());
    }
    if let Some(v) = cli.level {
        config.level = Some(v);
    }
    if let Some(v) = cli.budget {
        config.budget = Some(v);
    }
    if let Some(v) = &cli.dist {
        config.distribution = Some(v.clone());
    }
    if let Some(v) = &cli.method {
        config.settings.insert("method".into(), v.clone());
    }
    for kv in &cli.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        config
            .set(k.trim(), v.trim())
            .map_err(|m| CliError::Config(format!("--set: {m}")))?;
    }
    Ok(config)
}

/// Hash of everything that determines the output: the subcommand and all
/// settings except thread count and destination.
pub fn config_hash(command: Command, config: &ExperimentConfig) -> String {
    let mut canon = format!("subcommand={}\nseed={}\n", command.name(), config.seed);
    if let Some(b) = config.budget {
        canon += &format!("budget={b}\n");
    }
    if let Some(l) = config.level {
        canon += &format!("level={l}\n");
    }
    if let Some(d) = &config.distribution {
        canon += &format!("distribution={d}\n");
    }
    for (k, v) in &config.settings {
        canon += &format!("{k}={v}\n");
    }
    hex::encode(Sha256::digest(canon.as_bytes()))
}

fn execute(cli: &Cli) -> Result<(ExperimentConfig, Outcome), CliError> {
    let config = resolve(cli)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads)
        .build()
        .map_err(|e| CliError::Internal(e.to_string()))?;
    let outcome = pool.install(|| commands::dispatch(cli.command, &config))?;
    Ok((config, outcome))
}

/// Runs the command line `argv` (program name first), writing CSV to the
/// configured file or `stdout` and the summary to `stdout` or `stderr`.
pub fn run_with<O: Write, E: Write>(argv: &[String], stdout: &mut O, stderr: &mut E) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = if e.use_stderr() {
                write!(stderr, "{e}")
            } else {
                write!(stdout, "{e}")
            };
            return code;
        }
    };
    let (config, outcome) = match execute(&cli) {
        Ok(r) => r,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            return e.exit_code();
        }
    };
    let csv = format!(
        "{}# seed={}, config_hash={}\n",
        outcome.csv,
        config.seed,
        config_hash(cli.command, &config)
    );
    let written = match &config.out {
        Some(path) => fs::write(path, &csv).and_then(|_| writeln!(stdout, "{}", outcome.summary)),
        None => stdout
            .write_all(csv.as_bytes())
            .and_then(|_| writeln!(stderr, "{}", outcome.summary)),
    };
    match written {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            EXIT_INTERNAL
        }
    }
}

/// [`run_with`] on the process streams.
pub fn run(argv: &[String]) -> i32 {
    run_with(
        argv,
        &mut std::io::stdout().lock(),
        &mut std::io::stderr().lock(),
    )
}
