//! Command-line front end: config files, analysis subcommands and report
//! emission.
//!
//! Exit status: 0 when every check passes, 1 when a check fails (the report
//! holds the witness), 2 on configuration and other errors.

use std::fmt;
use std::path::PathBuf;

pub mod commands;
pub mod config;
pub mod output;

use commands::{Context, Registry};
use config::LoadedConfig;
use output::OutDir;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Core(String),
    Io(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "{m}"),
            CliError::Core(m) => write!(f, "{m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

/// Parsed command-line options.
#[derive(Debug, Clone, Default)]
pub struct Invocation {
    pub subcommand: String,
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub horizon: Option<f64>,
    pub tol: Option<f64>,
}

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_ERROR: i32 = 2;

pub fn run(inv: &Invocation) -> Result<bool, CliError> {
    let registry = Registry::with_builtins();
    let handler = registry
        .get(&inv.subcommand)
        .ok_or_else(|| CliError::Config(format!("unknown subcommand `{}`", inv.subcommand)))?;
    for (name, v) in [("--horizon", inv.horizon), ("--tol", inv.tol)] {
        if let Some(v) = v {
            if !(v > 0.0 && v.is_finite()) {
                return Err(CliError::Config(format!("{name} must be positive, got {v}")));
            }
        }
    }
    let config = match &inv.config {
        Some(p) => LoadedConfig::read(p)?,
        None if inv.subcommand == "corpus-verify" => LoadedConfig::empty(),
        None => return Err(CliError::Config(format!("`{}` needs --config", inv.subcommand))),
    };
    let seed = inv.seed.unwrap_or(config.config.seed);
    let out = OutDir::create(inv.out.clone().unwrap_or_else(|| PathBuf::from(&config.config.outputs.dir)))?;
    let ctx = Context { config, seed, out, horizon: inv.horizon, tol: inv.tol };
    handler.run(&ctx)
}

/// Maps a run result to the process exit status.
pub fn exit_code(r: &Result<bool, CliError>) -> i32 {
    match r {
        Ok(true) => EXIT_PASS,
        Ok(false) => EXIT_FAIL,
        Err(_) => EXIT_ERROR,
    }
}
