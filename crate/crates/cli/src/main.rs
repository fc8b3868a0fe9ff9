mod commands;
mod config;
mod experiment;

use clap::{Args, Parser, Subcommand};
use commands::{exit_code_for, resolve_out_dir, run_command, Ctx};
use config::ExperimentConfig;
use experiment::Experiment;
use std::path::PathBuf;
use std::process::ExitCode;

/// Eikonal inversion experiments: forward marching solves, data synthesis
/// and multilevel MCMC posterior estimation.
#[derive(Parser)]
#[command(name = "eikmc", version, about)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (beats EIKMC_OUT_DIR and the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (0 = available parallelism).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve one forward problem and dump the travel-time matrix.
    Forward(Common),
    /// Synthesize noisy observations plus their noiseless twin.
    GenerateData(Common),
    /// Run a single-level Metropolis-Hastings chain.
    Mcmc(Common),
    /// Run the multilevel estimator over the configured replicates.
    Mlmcmc(Common),
    /// Error-vs-level sweep against the quadrature reference.
    ConvergenceStudy(Common),
    /// Posterior-mean field recovery on a grid quantity.
    Recover(Common),
    /// Wall-time tables for forward solves or full runs.
    Timing(Common),
}

impl Cmd {
    fn split(&self) -> (&'static str, &Common) {
        match self {
            Cmd::Forward(c) => ("forward", c),
            Cmd::GenerateData(c) => ("generate-data", c),
            Cmd::Mcmc(c) => ("mcmc", c),
            Cmd::Mlmcmc(c) => ("mlmcmc", c),
            Cmd::ConvergenceStudy(c) => ("convergence-study", c),
            Cmd::Recover(c) => ("recover", c),
            Cmd::Timing(c) => ("timing", c),
        }
    }
}

fn run() -> Result<(), (u8, String)> {
    let cli = Cli::parse();
    let (name, common) = cli.cmd.split();

    let text = std::fs::read_to_string(&common.config)
        .map_err(|e| (2u8, format!("cannot read {}: {e}", common.config.display())))?;
    let mut cfg =
        ExperimentConfig::parse_str(&text).map_err(|e| (2u8, format!("config error: {e}")))?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(threads) = common.threads {
        cfg.threads = threads;
    }
    if cfg.threads > 0 {
        // Build the global pool once; later calls with a configured pool are
        // a no-op error we can ignore.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build_global();
    }
    let out_dir = resolve_out_dir(common.out.as_deref(), &cfg.out_dir);
    let config_dir = common
        .config
        .parent()
        .map(|p| p.to_path_buf())
        .unwrap_or_else(|| PathBuf::from("."));

    let exp = Experiment::build(cfg).map_err(|e| (exit_code_for(&e), e.to_string()))?;
    let ctx = Ctx {
        exp,
        out_dir,
        config_dir,
    };
    run_command(name, &ctx).map_err(|e| (exit_code_for(&e), e.to_string()))
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, msg)) => {
            eprintln!("eikmc: {msg}");
            ExitCode::from(code)
        }
    }
}
