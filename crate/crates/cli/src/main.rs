//! `hydrolim`: runs particle simulations, hydrodynamic experiments, flux
//! estimation and the invariant suite from JSON configs.
//!
//! Exit status: 0 pass, 1 fail (or runtime error), 2 configuration error.

mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use hydrolim::harness::ExperimentPlan;

use crate::config::{config_error, CellFilter, ConfigError};

const OUT_ENV: &str = "HYDROLIM_OUT";

#[derive(Parser)]
#[command(name = "hydrolim", version, about = "Hydrodynamic limits of attractive particle systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one trajectory; writes snapshots.csv, currents.csv, summary.json.
    Simulate(Common),
    /// Riemann experiment; writes cells.csv, currents.csv, summary.json.
    Riemann(Common),
    /// Cauchy experiment against the front-tracking solution.
    Cauchy(Common),
    /// Equilibrium flux estimates; writes estimates.csv, points.csv, summary.json.
    Flux(Common),
    /// Monotonicity, coupling, conservation and admissibility checks.
    Verify(Common),
}

#[derive(Args)]
struct Common {
    /// JSON config file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory [default: $HYDROLIM_OUT/<config name>, else hydrolim-out/<config name>].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long)]
    jobs: Option<usize>,
    /// Restrict experiment cells, e.g. `N=800,seed=3`.
    #[arg(long)]
    cell_filter: Option<String>,
}

impl Common {
    fn out_dir(&self) -> PathBuf {
        if let Some(o) = &self.out {
            return o.clone();
        }
        let root = std::env::var_os(OUT_ENV).map_or_else(|| PathBuf::from("hydrolim-out"), PathBuf::from);
        let stem = self.config.file_stem().map_or_else(|| "run".into(), |s| s.to_os_string());
        root.join(stem)
    }

    fn filter(&self) -> Result<CellFilter> {
        self.cell_filter.as_deref().map_or(Ok(CellFilter::default()), CellFilter::parse)
    }
}

fn load_plan(path: &Path) -> Result<ExperimentPlan> {
    let plan: ExperimentPlan = config::load(path)?;
    plan.validate().map_err(|e| config_error(format!("{}: {e}", path.display())))?;
    Ok(plan)
}

fn run(cli: Cli) -> Result<bool> {
    let common = match &cli.command {
        Command::Simulate(c) | Command::Riemann(c) | Command::Cauchy(c) | Command::Flux(c) | Command::Verify(c) => c,
    };
    if let Some(j) = common.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(j.max(1))
            .build_global()
            .context("configuring the worker pool")?;
    }
    let filter = common.filter()?;
    let path = common.config.as_path();
    // everything is parsed and validated before the output directory is touched
    let out = common.out_dir();
    let prepare = |out: &Path| -> Result<()> {
        std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))
    };
    match &cli.command {
        Command::Simulate(_) => {
            let mut cfg: config::SimulateConfig = config::load(path)?;
            cfg.model.build().map_err(|e| config_error(format!("{}: {e}", path.display())))?;
            if let Some(s) = common.seed {
                cfg.seed = s;
            }
            prepare(&out)?;
            commands::simulate(&cfg, &out)
        }
        Command::Riemann(_) | Command::Cauchy(_) => {
            let mut plan = load_plan(path)?;
            commands::adjust_plan(&mut plan, &filter, common.seed)?;
            prepare(&out)?;
            commands::experiment(&plan, matches!(cli.command, Command::Cauchy(_)), &out)
        }
        Command::Flux(_) => {
            let mut cfg: config::FluxConfig = config::load(path)?;
            cfg.model.build().map_err(|e| config_error(format!("{}: {e}", path.display())))?;
            if let Some(s) = common.seed {
                cfg.mc.base_seed = s;
            }
            prepare(&out)?;
            commands::flux(&cfg, &out)
        }
        Command::Verify(_) => {
            let mut cfg: config::VerifyConfig = config::load(path)?;
            if let Some(s) = common.seed {
                cfg.seed = s;
            }
            // fail early on unreadable or invalid model files
            for e in config::load_zoo(path, &cfg.models)? {
                e.spec.build().map_err(|err| config_error(format!("{}: {err}", e.path)))?;
            }
            for e in config::load_zoo(path, &cfg.counterexamples)? {
                e.spec
                    .build_unchecked()
                    .map_err(|err| config_error(format!("{}: {err}", e.path)))?;
            }
            prepare(&out)?;
            commands::verify(&cfg, path, &out)
        }
    }
}

fn is_config_error(err: &anyhow::Error) -> bool {
    use hydrolim::Error as E;
    err.chain().any(|e| {
        e.is::<ConfigError>()
            || matches!(
                e.downcast_ref::<E>(),
                Some(
                    E::InvalidSpec(_)
                        | E::InvalidProfile(_)
                        | E::InvalidArgument(_)
                        | E::InvalidEnvironment(_)
                        | E::Fencing(_)
                        | E::Cfl { .. }
                        | E::FluxUnavailable(_)
                        | E::InvalidFlux(_)
                        | E::Json(_)
                )
            )
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            if is_config_error(&e) {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
