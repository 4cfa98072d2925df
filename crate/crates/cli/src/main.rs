mod commands;
mod config;
mod svg;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{Command, Config};

#[derive(Parser)]
#[command(name = "cvscir", version, about = "CIR-type samplers on the simplex: experiments and oracle dumps")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; defaults to runs/<subcommand>.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// exact, scir, cv-main, cv-alt or sgrld; comma-separated lists are accepted.
    #[arg(long, global = true)]
    kernel: Option<String>,
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Sub {
    /// Sparse labelled-data experiment: quartiles and boxplots per sampler.
    Synthetic(Overrides),
    /// Variance curves of the exact, CV-alt, CV-main and SCIR chains over M.
    VarianceCompare(Overrides),
    /// Train LDA topic models and log held-out perplexity.
    LdaTrain(Overrides),
    /// Held-out perplexity of saved topic-word matrices.
    LdaEval(Overrides),
    /// Closed-form moments and constants over an M grid.
    Moments(Overrides),
}

#[derive(clap::Args)]
struct Overrides {
    /// KEY=VALUE settings, applied after the config file and flags.
    #[arg(value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Lib(cvscir::Error),
    Io(std::io::Error),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Lib(e) => write!(f, "{e}"),
            CliError::Io(e) => write!(f, "io: {e}"),
        }
    }
}

impl From<cvscir::Error> for CliError {
    fn from(e: cvscir::Error) -> Self {
        CliError::Lib(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Lib(e) if e.is_numerical() => 4,
            CliError::Lib(_) | CliError::Io(_) => 3,
        }
    }
}

fn resolve(cli: &Cli, command: Command, set: &[String]) -> Result<Config, CliError> {
    let mut cfg = Config::defaults(command);
    if let Some(path) = &cli.config {
        cfg.apply_file(path)?;
    }
    if let Some(seed) = cli.seed {
        cfg.set("seed", &seed.to_string())?;
    }
    if let Some(k) = &cli.kernel {
        if !cfg.has("kernel") {
            return Err(CliError::Config(format!("{} takes no --kernel", command.name())));
        }
        cfg.set("kernel", k)?;
    }
    if let Some(t) = cli.threads {
        cfg.set("threads", &t.to_string())?;
    }
    for pair in set {
        cfg.apply_override(pair)?;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let (command, set) = match &cli.command {
        Sub::Synthetic(o) => (Command::Synthetic, &o.set),
        Sub::VarianceCompare(o) => (Command::VarianceCompare, &o.set),
        Sub::LdaTrain(o) => (Command::LdaTrain, &o.set),
        Sub::LdaEval(o) => (Command::LdaEval, &o.set),
        Sub::Moments(o) => (Command::Moments, &o.set),
    };
    let cfg = resolve(&cli, command, set)?;
    let threads: usize = cfg.get("threads")?;
    if threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("runs").join(command.name()));
    std::fs::create_dir_all(&out)?;
    std::fs::write(out.join("config"), cfg.render())?;
    match command {
        Command::Synthetic => commands::synthetic(&cfg, &out),
        Command::VarianceCompare => commands::variance_compare(&cfg, &out),
        Command::Moments => commands::moments(&cfg, &out),
        Command::LdaTrain => commands::lda_train(&cfg, &out),
        Command::LdaEval => commands::lda_eval(&cfg, &out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("cvscir: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
