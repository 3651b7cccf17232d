use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use xpm_core::config::{Profile, RunConfig};
use xpm_core::error::{EnvError, TrainError};
use xpm_core::eval::{self, Population};
use xpm_core::run::{self, EvalError, EvalKind, ARCHIVE_DIR};
use xpm_core::trainer::Method;

#[derive(Parser)]
#[command(name = "xpm", version, about = "Train and evaluate cross-play-minimizing agent populations")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a population of M agents one after another.
    Train(TrainArgs),
    /// Evaluate a saved population.
    Eval(EvalArgs),
    /// Cumulative real environment steps against agent index, per run.
    ScalingReport(ScalingArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ProfileArg {
    Desk,
    Paper,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Lipo,
    Comedi,
    XpmSim,
    XpmWm,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Lipo => Method::Lipo,
            MethodArg::Comedi => Method::Comedi,
            MethodArg::XpmSim => Method::XpmSim,
            MethodArg::XpmWm => Method::XpmWm,
        }
    }
}

#[derive(clap::Args)]
struct TrainArgs {
    /// `mppmr` or `minikitchen:<layout>`.
    #[arg(long, default_value = "mppmr")]
    env: String,
    #[arg(long, value_enum)]
    method: MethodArg,
    /// Population size M.
    #[arg(long)]
    agents: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "desk")]
    profile: ProfileArg,
    /// TOML file whose keys override the profile and the flags above.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run directory.
    #[arg(long)]
    out: PathBuf,
    /// Collection workers; only single-worker (deterministic) runs are
    /// implemented.
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Matrix,
    Sabotage,
    Conventions,
}

#[derive(clap::Args)]
struct EvalArgs {
    /// Archive directory, or a run directory containing one.
    archive: PathBuf,
    #[arg(long, value_enum)]
    kind: Kind,
    #[arg(long)]
    out: PathBuf,
    /// Episodes per ordered pair (per agent for conventions).
    #[arg(long, default_value_t = eval::EVAL_EPISODES)]
    episodes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(clap::Args)]
struct ScalingArgs {
    /// Run directories written by `train`.
    #[arg(required = true)]
    runs: Vec<PathBuf>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

/// Failure mapped to the process exit code.
enum Failure {
    /// Bad input: exit 2.
    Usage(anyhow::Error),
    /// Anything else: exit 1.
    Runtime(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Runtime(e.into())
    }
}

fn usage(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Usage(e.into())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Train(a) => train(a),
        Cmd::Eval(a) => evaluate(a),
        Cmd::ScalingReport(a) => scaling(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn train(a: TrainArgs) -> Result<(), Failure> {
    let profile = match a.profile {
        ProfileArg::Desk => Profile::Desk,
        ProfileArg::Paper => Profile::Paper,
    };
    let mut cfg = RunConfig::new(profile, &a.env, a.method.into(), a.agents, a.seed);
    if let Some(p) = &a.config {
        let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display())).map_err(usage)?;
        cfg = cfg.with_overrides(&text).map_err(usage)?;
    }
    if a.workers != 1 {
        return Err(usage(anyhow!("only --workers 1 is supported")));
    }
    cfg.validate().map_err(usage)?;
    log::info!(
        "training {} agents with {} on {} ({:?} profile, seed {})",
        cfg.agents,
        cfg.method.name(),
        cfg.env,
        cfg.profile,
        cfg.seed
    );
    let out = run::train_population(&cfg)?;
    run::write_run(&a.out, &cfg, &out)?;
    log::info!("wrote {}", a.out.display());
    Ok(())
}

fn load(path: &Path) -> Result<Population, Failure> {
    let dir = if path.join(ARCHIVE_DIR).join("manifest.json").exists() {
        path.join(ARCHIVE_DIR)
    } else {
        path.to_path_buf()
    };
    let pop = eval::load_population(&dir).with_context(|| format!("loading {}", dir.display()))?;
    pop.validate()?;
    Ok(pop)
}

fn eval_failure(e: EvalError) -> Failure {
    match e {
        EvalError::Train(e @ (TrainError::Env(EnvError::Unsupported(_)) | TrainError::Config(_))) => usage(e),
        e => Failure::Runtime(e.into()),
    }
}

fn evaluate(a: EvalArgs) -> Result<(), Failure> {
    let pop = load(&a.archive)?;
    let before = pop.checksum();
    let kind = match a.kind {
        Kind::Matrix => EvalKind::Matrix,
        Kind::Sabotage => EvalKind::Sabotage,
        Kind::Conventions => EvalKind::Conventions,
    };
    let summary = run::write_eval(&pop, kind, a.episodes, a.seed, &a.out).map_err(eval_failure)?;
    if pop.checksum() != before {
        return Err(Failure::Runtime(anyhow!("evaluation changed agent parameters")));
    }
    log::info!("{summary}; wrote {}", a.out.display());
    Ok(())
}

fn scaling(a: ScalingArgs) -> Result<(), Failure> {
    let runs: Vec<&Path> = a.runs.iter().map(|p| p.as_path()).collect();
    if runs.is_empty() {
        return Err(usage(anyhow!("at least one run directory is required")));
    }
    run::write_scaling_report(&runs, &a.out)?;
    log::info!("wrote {}", a.out.join("scaling.csv").display());
    Ok(())
}
