//! `mvinfer` command-line interface.
//!
//! Exit codes: 0 on success, 2 when an invariant check fails (mass,
//! positivity, instability, inequality report), 1 for any other error.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use mvinfer::constants::reference_family;
use mvinfer::diagnostics::calibrate;
use mvinfer::experiments::{run, run_diagnose, ExperimentConfig, ExperimentKind};

#[derive(Parser)]
#[command(
    name = "mvinfer",
    version,
    about = "McKean-Vlasov simulation and Bayesian recovery of interaction potentials"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON experiment config; defaults are used for anything omitted.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory (overrides `output_dir`).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Global seed (overrides `seed` and `chain.seed`).
    #[arg(long, value_name = "INT")]
    seed: Option<u64>,
    /// Worker threads for experiment cells.
    #[arg(long, value_name = "INT")]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the McKean-Vlasov equation and export the trajectory.
    Solve(Common),
    /// Simulate the interacting particle system and bin a histogram.
    Simulate(Common),
    /// Generate synthetic regression data.
    Generate(Common),
    /// Run the pCN sampler on a data set.
    Infer(Common),
    /// Run a named experiment (solve, simulate, generate, infer,
    /// forward_rate, inverse_rate, chaos_trend, stability_profile).
    Experiment {
        name: String,
        #[command(flatten)]
        common: Common,
    },
    /// Check the stability inequalities for the configured instance.
    Diagnose {
        #[command(flatten)]
        common: Common,
        /// Print the largest ratios on the reference family instead.
        #[arg(long)]
        calibrate: bool,
    },
}

fn load(common: &Common) -> anyhow::Result<ExperimentConfig> {
    if let Some(n) = common.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring the thread pool")?;
    }
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    if let Some(seed) = common.seed {
        cfg = cfg.with_seed(seed);
    }
    Ok(cfg)
}

fn run_kind(common: &Common, kind: Option<ExperimentKind>) -> anyhow::Result<()> {
    let mut cfg = load(common)?;
    if let Some(k) = kind {
        cfg.experiment = k;
    }
    let manifest = run(&cfg)?;
    println!("{}", serde_json::to_string_pretty(&manifest.summary)?);
    eprintln!("wrote {} files to {}", manifest.outputs.len(), cfg.output_dir.display());
    Ok(())
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Solve(c) => run_kind(&c, Some(ExperimentKind::Solve)),
        Command::Simulate(c) => run_kind(&c, Some(ExperimentKind::Simulate)),
        Command::Generate(c) => run_kind(&c, Some(ExperimentKind::Generate)),
        Command::Infer(c) => run_kind(&c, Some(ExperimentKind::Infer)),
        Command::Experiment { name, common } => run_kind(&common, Some(name.parse()?)),
        Command::Diagnose { common, calibrate: true } => {
            load(&common)?;
            let cal = calibrate(&reference_family()?)?;
            println!("{}", serde_json::to_string_pretty(&cal)?);
            Ok(())
        }
        Command::Diagnose { common, calibrate: false } => {
            let cfg = load(&common)?;
            let reports = run_diagnose(&cfg)?;
            let mut failed = Vec::new();
            for r in &reports {
                println!(
                    "{:<20} lhs = {:.6e}  rhs = {:.6e}  ratio = {:.4}  {}",
                    r.name,
                    r.lhs,
                    r.rhs,
                    r.ratio,
                    if r.holds { "holds" } else { "FAILS" }
                );
                if !r.holds {
                    failed.push(r.name.clone());
                }
            }
            if failed.is_empty() {
                Ok(())
            } else {
                Err(mvinfer::Error::Invariant(format!("reports failed: {}", failed.join(", "))).into())
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let invariant = e.downcast_ref::<mvinfer::Error>().is_some_and(|e| e.is_invariant_violation());
            ExitCode::from(if invariant { 2 } else { 1 })
        }
    }
}
