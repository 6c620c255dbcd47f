//! `microbranch` command-line front end.

mod commands;
mod config;
mod svg;
mod validate;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;

#[derive(Parser)]
#[command(name = "microbranch", version, about = "Branched microstructures and two-well energy scaling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    flags: Flags,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Build a construction; write its cell manifest and an SVG rendering.
    Construct,
    /// Energy breakdown of every candidate construction.
    Energy,
    /// Energies over a list of epsilons with a log-log fit.
    Sweep,
    /// Regime map over log10(L/eps) x log10(H/eps).
    Phase,
    /// Multi-start discrete minimisation and the energy sandwich.
    Minimize,
    /// Run the invariant suite.
    Validate,
}

/// Flags override values read from `--config`.
#[derive(Args)]
struct Flags {
    /// key=value file; '#' starts a comment.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<String>,
    /// k1 or k2.
    #[arg(long, global = true)]
    case: Option<String>,
    #[arg(long, global = true)]
    alpha: Option<String>,
    #[arg(long, global = true)]
    epsilon: Option<String>,
    /// Domain length.
    #[arg(long = "L", global = true, value_name = "L")]
    length: Option<String>,
    /// Domain height.
    #[arg(long = "H", global = true, value_name = "H")]
    height: Option<String>,
    /// Mesh cells per axis.
    #[arg(long, global = true, value_name = "NX,NY")]
    mesh: Option<String>,
    #[arg(long, global = true, value_name = "N")]
    seed: Option<String>,
    /// Any other config key, repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

/// Failure classes with their exit codes.
pub enum Failure {
    Config(String),
    Validation(String),
    NonConvergence(String),
    Other(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Other(_) => 1,
            Failure::Config(_) => 2,
            Failure::Validation(_) => 3,
            Failure::NonConvergence(_) => 4,
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Other(e)
    }
}

fn load_config(flags: &Flags) -> Result<RunConfig, Failure> {
    let mut cfg = match &flags.config {
        Some(p) => RunConfig::from_file(p).map_err(|e| Failure::Config(e.to_string()))?,
        None => RunConfig::default(),
    };
    let pairs = [
        ("out", &flags.out),
        ("case", &flags.case),
        ("alpha", &flags.alpha),
        ("epsilon", &flags.epsilon),
        ("L", &flags.length),
        ("H", &flags.height),
        ("mesh", &flags.mesh),
        ("seed", &flags.seed),
    ];
    for (k, v) in pairs {
        if let Some(v) = v {
            cfg.set(k, v).map_err(|e| Failure::Config(e.to_string()))?;
        }
    }
    for kv in &flags.set {
        let (k, v) = kv.split_once('=').ok_or_else(|| Failure::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k.trim(), v).map_err(|e| Failure::Config(e.to_string()))?;
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let cfg = load_config(&cli.flags)?;
    if cfg.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build_global()
            .map_err(|e| Failure::Other(e.into()))?;
    }
    match cli.command {
        Command::Construct => commands::construct(&cfg),
        Command::Energy => commands::energy(&cfg),
        Command::Sweep => commands::sweep(&cfg),
        Command::Phase => commands::phase(&cfg),
        Command::Minimize => commands::minimize(&cfg),
        Command::Validate => commands::validate(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Config(m) => eprintln!("config error: {m}"),
                Failure::Validation(m) => eprintln!("validation failed: {m}"),
                Failure::NonConvergence(m) => eprintln!("not converged: {m}"),
                Failure::Other(e) => eprintln!("error: {e:#}"),
            }
            ExitCode::from(f.code())
        }
    }
}
