use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mldlmc_cli::commands;
use mldlmc_cli::experiments::Estimator;
use mldlmc_cli::{output, RunConfig};

#[derive(Parser, Debug)]
#[command(
    name = "mldlmc",
    version,
    about = "Multilevel double loop Monte Carlo for McKean-Vlasov SDEs"
)]
struct Cli {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve the importance sampling control offline and save it.
    SolveControl,
    /// Level-difference mean and variance decay rates.
    Rates,
    /// Squared coefficient of variation with and without the control.
    IsExperiments,
    /// One adaptive multilevel run.
    Adaptive,
    /// Repeated adaptive multilevel runs over tolerances.
    AdaptiveSweep,
    /// The same sweep with the single-level estimator.
    Baseline,
}

const EXIT_USAGE: u8 = 1;
const EXIT_NUMERICAL: u8 = 2;

fn load(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli, cfg: &RunConfig) -> anyhow::Result<()> {
    output::prepare_dir(&cfg.out)?;
    output::echo_config(cfg, &cfg.out)?;
    match cli.command {
        Command::SolveControl => commands::solve_control(cfg).map(drop),
        Command::Rates => commands::rates(cfg).map(drop),
        Command::IsExperiments => commands::is_experiments(cfg).map(drop),
        Command::Adaptive => commands::adaptive(cfg).map(drop),
        Command::AdaptiveSweep => commands::sweep(cfg, Estimator::Multilevel).map(drop),
        Command::Baseline => commands::sweep(cfg, Estimator::SingleLevel).map(drop),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let cfg = match load(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    match run(&cli, &cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_NUMERICAL)
        }
    }
}
