use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use rare_core::mckalman::Functional;

use crate::experiment::ExperimentConfig;

#[derive(Debug, Parser)]
#[command(name = "rare", version, about = "Kalman filtering over randomized sensor schedules")]
pub struct Cli {
    /// Experiment config (JSON). `demo` falls back to the bundled scalar system.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Directory for artifacts. Nothing is written without it.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,

    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Write into a non-empty output directory.
    #[arg(long, global = true)]
    pub force: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Detectability of every atom, J(D), weak detectability and the standing assumption.
    Analyze,
    /// Fixed point of the Riccati map of every detectable atom.
    FixedPoints(FixedPointArgs),
    /// Truncated enumeration of the support of the invariant distribution.
    Support(SupportArgs),
    /// Monte Carlo ensembles: KS statistics, tail tables and moment curves.
    Montecarlo(MonteCarloArgs),
    /// analyze, fixed-points, support and montecarlo in one go.
    Demo,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Analyze => "analyze",
            Command::FixedPoints(_) => "fixed-points",
            Command::Support(_) => "support",
            Command::Montecarlo(_) => "montecarlo",
            Command::Demo => "demo",
        }
    }
}

#[derive(Debug, Args, Default)]
pub struct FixedPointArgs {
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
}

#[derive(Debug, Args, Default)]
pub struct SupportArgs {
    /// Anchor atom as a comma-separated sensor list, e.g. `1,2`.
    #[arg(long, value_delimiter = ',')]
    pub anchor: Option<Vec<usize>>,
    #[arg(long)]
    pub depth: Option<usize>,
    /// Merge radius for duplicate points (spectral norm).
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub node_cap: Option<usize>,
    /// Compose every subset map, not only those of the schedule's atoms.
    #[arg(long)]
    pub full_alphabet: bool,
}

#[derive(Debug, Args, Default)]
pub struct MonteCarloArgs {
    #[arg(long)]
    pub paths: Option<usize>,
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub burn_in: Option<usize>,
    /// trace, spectral-norm or log-det.
    #[arg(long)]
    pub functional: Option<Functional>,
    #[arg(long)]
    pub t_star: Option<usize>,
    /// One seed per ensemble, comma-separated.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Initial covariance scales `s` (ensembles start at `s * I`), comma-separated.
    #[arg(long, value_delimiter = ',')]
    pub initial_scales: Option<Vec<f64>>,
    /// Also write every path as `trajectories.csv`.
    #[arg(long)]
    pub trajectories: bool,
}

fn set<T>(target: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *target = v;
    }
}

impl Cli {
    /// Command line values take precedence over the config file.
    pub fn apply_overrides(&self, config: &mut ExperimentConfig) {
        set(&mut config.seed, self.seed);
        match &self.command {
            Command::FixedPoints(a) => {
                set(&mut config.fixed_points.tol, a.tol);
                set(&mut config.fixed_points.max_iter, a.max_iter);
            }
            Command::Support(a) => {
                if a.anchor.is_some() {
                    config.support.anchor = a.anchor.clone();
                }
                set(&mut config.support.depth, a.depth);
                set(&mut config.support.delta, a.delta);
                set(&mut config.support.node_cap, a.node_cap);
                config.support.full_alphabet |= a.full_alphabet;
            }
            Command::Montecarlo(a) => {
                let mc = &mut config.montecarlo;
                set(&mut mc.paths, a.paths);
                set(&mut mc.horizon, a.horizon);
                set(&mut mc.burn_in, a.burn_in);
                set(&mut mc.functional, a.functional);
                set(&mut mc.t_star, a.t_star);
                set(&mut mc.initial_scales, a.initial_scales.clone());
                if a.seeds.is_some() {
                    mc.seeds = a.seeds.clone();
                }
                mc.trajectories |= a.trajectories;
            }
            Command::Analyze | Command::Demo => {}
        }
    }
}
