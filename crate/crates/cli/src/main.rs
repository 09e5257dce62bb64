//! `liegconv`: train, evaluate and analyse Lie group convolutional networks.
//!
//! Exit codes: 0 on success, 1 on a runtime failure, 2 on a bad
//! configuration.

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{parse_assignment, parse_lines, ConfigError, ExperimentConfig};

#[derive(Parser, Debug)]
#[command(name = "liegconv", version, about = "Lie group convolutions with separable kernels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model and write a checkpoint and metrics.csv.
    Train(Common),
    /// Test accuracy of a checkpoint.
    Eval(Common),
    /// Test error under input rotations or scalings, and layerwise errors.
    Equivariance(Common),
    /// Kernel redundancy of a checkpoint against its initialization.
    Redundancy(Common),
    /// Time and count the convolution executors.
    Bench(Common),
    /// Numerical checks of the group, executors and gradients.
    Selftest(Common),
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Config file of `key=value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set lr=3e-4`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug)]
pub enum CliError {
    Config(ConfigError),
    Runtime(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(e) => write!(f, "{e}"),
            CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

impl From<liegconv::Error> for CliError {
    fn from(e: liegconv::Error) -> Self {
        match e {
            liegconv::Error::Config { key, message } => config_error(&key, message),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

pub fn config_error(key: &str, message: impl Into<String>) -> CliError {
    CliError::Config(ConfigError {
        key: key.to_string(),
        message: message.into(),
    })
}

impl Common {
    /// Command-line assignments in order, `--out` and `--seed` last.
    fn overrides(&self) -> Result<Vec<(String, String)>, ConfigError> {
        let mut v = self.set.iter().map(|s| parse_assignment(s)).collect::<Result<Vec<_>, _>>()?;
        if let Some(out) = &self.out {
            v.push(("out".into(), out.display().to_string()));
        }
        if let Some(seed) = self.seed {
            v.push(("seed".into(), seed.to_string()));
        }
        Ok(v)
    }

    fn resolve(&self) -> Result<(ExperimentConfig, Vec<(String, String)>), CliError> {
        let mut cfg = ExperimentConfig::default();
        let mut overrides = Vec::new();
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path).map_err(|e| config_error("config", format!("{}: {e}", path.display())))?;
            overrides = parse_lines(&text)?;
        }
        overrides.extend(self.overrides()?);
        cfg.apply(&overrides)?;
        cfg.validate()?;
        Ok((cfg, overrides))
    }
}

fn configure_threads() -> Result<(), CliError> {
    if let Ok(v) = std::env::var("LIEGCONV_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| config_error("LIEGCONV_THREADS", format!("expected a thread count, got `{v}`")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<bool, CliError> {
    configure_threads()?;
    match cli.command {
        Command::Train(c) => {
            let (cfg, _) = c.resolve()?;
            commands::train_cmd(&cfg)?;
        }
        Command::Eval(c) => {
            let (cli_cfg, overrides) = c.resolve()?;
            commands::ensure_exists(&cli_cfg.checkpoint_path())?;
            let (cfg, model) = commands::with_checkpoint(&cli_cfg, &overrides)?;
            commands::eval_cmd(&cfg, &model)?;
        }
        Command::Equivariance(c) => {
            let (cli_cfg, overrides) = c.resolve()?;
            commands::ensure_exists(&cli_cfg.checkpoint_path())?;
            let (cfg, model) = commands::with_checkpoint(&cli_cfg, &overrides)?;
            commands::equivariance_cmd(&cfg, &model)?;
        }
        Command::Redundancy(c) => {
            let (cli_cfg, overrides) = c.resolve()?;
            commands::ensure_exists(&cli_cfg.checkpoint_path())?;
            let (cfg, model) = commands::with_checkpoint(&cli_cfg, &overrides)?;
            commands::redundancy_cmd(&cfg, &model)?;
        }
        Command::Bench(c) => {
            let (cfg, _) = c.resolve()?;
            commands::bench_cmd(&cfg)?;
        }
        Command::Selftest(c) => {
            let (cfg, _) = c.resolve()?;
            return commands::selftest_cmd(cfg.u64("seed")?);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e @ CliError::Config(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
