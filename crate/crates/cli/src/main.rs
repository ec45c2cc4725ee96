//! `slewgen` — batch front end for the crane modeling and trajectory pipeline.
//!
//! Typical flow: `gen-data` simulates excitation records, `build-model` (or
//! `tune-sim`) turns them into a window-span model, `gen-traj` (or
//! `tune-traj`) produces an anti-sway slewing trajectory, `benchmark` plans
//! the same motion with the waypoint optimizer, and `compare` scores the two
//! rollouts side by side. Exit codes: 0 success, 2 infeasible problem,
//! 1 any other failure.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use slewgen::{Error, Result};

mod commands;
mod config;

use config::{Mode, RunConfig};

#[derive(Parser)]
#[command(name = "slewgen", version, about = "Data-driven crane modeling and anti-sway trajectory generation")]
struct Cli {
    /// Run configuration, TOML or JSON by extension; defaults apply when absent.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Master seed; offsets every stochastic stage.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Artifact directory.
    #[arg(long, global = true, value_name = "DIR")]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate excitation records for model building.
    GenData {
        /// Number of independent records.
        #[arg(long)]
        runs: Option<usize>,
        /// Length of each record in seconds.
        #[arg(long)]
        duration: Option<f64>,
        /// Channel layout of the recorded data.
        #[arg(long, value_enum)]
        mode: Option<Mode>,
    },
    /// Stack recorded data into a window-span model, with optional column
    /// selection and denoising.
    BuildModel {
        /// Window depth L.
        #[arg(long)]
        depth: Option<usize>,
        /// Keep this many columns in pivot order.
        #[arg(long)]
        nu: Option<usize>,
        /// Relative singular-value threshold.
        #[arg(long)]
        delta: Option<f64>,
        /// Directory of recorded trajectory csv files.
        #[arg(long, value_name = "DIR")]
        data_dir: Option<PathBuf>,
    },
    /// Grid-search (delta, lambda, nu) by held-out prediction error.
    TuneSim {
        #[arg(long, value_name = "DIR")]
        data_dir: Option<PathBuf>,
        /// Trailing records held out as the test set.
        #[arg(long)]
        n_test: Option<usize>,
    },
    /// Grid-search (lambda, mu, sigma) by trajectory quality.
    TuneTraj {
        /// Model stem (the path without the .bin/.json extension).
        #[arg(long, value_name = "STEM")]
        model: Option<PathBuf>,
    },
    /// Generate an anti-sway slewing trajectory and roll it out.
    GenTraj {
        #[arg(long, value_name = "STEM")]
        model: Option<PathBuf>,
        /// Starting boom angle in radians.
        #[arg(long)]
        start: Option<f64>,
        /// Target boom angle in radians.
        #[arg(long)]
        target: Option<f64>,
        /// Known resting samples at each end of the window.
        #[arg(long)]
        n_given: Option<usize>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        mu: Option<f64>,
        #[arg(long)]
        sigma: Option<f64>,
    },
    /// Predict a recorded window from its first samples and inputs.
    Simulate {
        #[arg(long, value_name = "STEM")]
        model: Option<PathBuf>,
        /// Recorded trajectory csv to predict.
        #[arg(long, value_name = "FILE")]
        input: PathBuf,
        #[arg(long)]
        n_ini: Option<usize>,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// Plan the scenario with the model-based waypoint optimizer.
    Benchmark {
        #[arg(long)]
        start: Option<f64>,
        #[arg(long)]
        target: Option<f64>,
    },
    /// Score two rollouts of the same scenario side by side.
    Compare {
        /// Rollout of the data-driven trajectory.
        #[arg(long, value_name = "FILE")]
        data_driven: PathBuf,
        /// Rollout of the waypoint plan.
        #[arg(long, value_name = "FILE")]
        model_based: PathBuf,
    },
    /// Closed-form accessibility determinant over random states.
    Controllability {
        #[arg(long)]
        n_states: Option<usize>,
    },
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = cli.out_dir {
        cfg.out_dir = dir;
    }
    fs::create_dir_all(&cfg.out_dir)?;

    match cli.command {
        Command::GenData { runs, duration, mode } => {
            if let Some(v) = runs {
                cfg.data.runs = v;
            }
            if let Some(v) = duration {
                cfg.excitation.duration = v;
            }
            if let Some(v) = mode {
                cfg.mode = v;
            }
            commands::gen_data(&cfg)
        }
        Command::BuildModel { depth, nu, delta, data_dir } => {
            if let Some(v) = depth {
                cfg.model.depth = v;
            }
            if nu.is_some() {
                cfg.model.nu = nu;
            }
            if delta.is_some() {
                cfg.model.delta = delta;
            }
            commands::build_model(&cfg, data_dir.as_deref())
        }
        Command::TuneSim { data_dir, n_test } => {
            if let Some(v) = n_test {
                cfg.tune_sim.n_test = v;
            }
            commands::tune_sim(&cfg, data_dir.as_deref())
        }
        Command::TuneTraj { model } => commands::tune_traj(&cfg, model.as_deref()),
        Command::GenTraj { model, start, target, n_given, lambda, mu, sigma } => {
            if let Some(v) = start {
                cfg.scenario.start = v;
            }
            if let Some(v) = target {
                cfg.scenario.target = v;
            }
            if let Some(v) = n_given {
                cfg.scenario.n_given = v;
            }
            if let Some(v) = lambda {
                cfg.scenario.lambda = v;
            }
            if let Some(v) = mu {
                cfg.scenario.mu = v;
            }
            if let Some(v) = sigma {
                cfg.scenario.sigma = v;
            }
            commands::gen_traj(&cfg, model.as_deref())
        }
        Command::Simulate { model, input, n_ini, epsilon, lambda } => {
            if let Some(v) = n_ini {
                cfg.simulate.n_ini = v;
            }
            if let Some(v) = epsilon {
                cfg.simulate.epsilon = v;
            }
            if let Some(v) = lambda {
                cfg.simulate.lambda = v;
            }
            commands::simulate_window(&cfg, model.as_deref(), &input)
        }
        Command::Benchmark { start, target } => {
            if let Some(v) = start {
                cfg.scenario.start = v;
            }
            if let Some(v) = target {
                cfg.scenario.target = v;
            }
            commands::benchmark(&cfg)
        }
        Command::Compare { data_driven, model_based } => {
            commands::compare_rollouts(&cfg, &data_driven, &model_based)
        }
        Command::Controllability { n_states } => {
            if let Some(v) = n_states {
                cfg.controllability.n_states = v;
            }
            commands::controllability(&cfg)
        }
    }
}

fn main() -> ExitCode {
    // clap reserves exit code 2 for usage errors; here 2 means infeasible, so
    // usage problems are remapped onto the generic failure code
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = u8::from(e.use_stderr());
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Infeasible(_) | Error::AllInfeasible => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
