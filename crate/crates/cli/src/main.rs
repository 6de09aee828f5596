use std::path::PathBuf;

use clap::{Parser, Subcommand};
use lasalle_cli::{exit_code, run, Invocation};

#[derive(Parser)]
#[command(name = "lasalle", version, about = "Invariance-principle and detectability checks for time-varying ODEs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON analysis config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides `outputs.dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    horizon: Option<f64>,
    #[arg(long, global = true)]
    tol: Option<f64>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Integrate trajectories and write CSVs.
    Simulate,
    /// Check H1-H3 for a certificate.
    Hypotheses,
    /// Estimate E, N and ω-limit sets and check convergence to N.
    Invariance,
    /// Detectability pipeline for an output pair.
    Detect,
    /// Robust stabilization under sector-bounded perturbations.
    Robust,
    /// Run the acceptance suite on the built-in corpus.
    CorpusVerify,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Hypotheses => "hypotheses",
            Command::Invariance => "invariance",
            Command::Detect => "detect",
            Command::Robust => "robust",
            Command::CorpusVerify => "corpus-verify",
        }
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            std::process::exit(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let inv = Invocation {
        subcommand: cli.command.name().to_string(),
        config: cli.config,
        seed: cli.seed,
        out: cli.out,
        horizon: cli.horizon,
        tol: cli.tol,
    };
    let result = run(&inv);
    match &result {
        Ok(true) => eprintln!("{}: all checks passed", inv.subcommand),
        Ok(false) => eprintln!("{}: a check failed; see the report", inv.subcommand),
        Err(e) => eprintln!("error: {e}"),
    }
    std::process::exit(exit_code(&result));
}
