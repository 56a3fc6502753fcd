//! Experiment configuration: the network and schedule plus parameters for
//! every subcommand. Every section and parameter is optional except
//! `network` and `schedule`; see `configs/` for complete examples.

use std::path::Path;

use rare_core::config::{read_file, ConfigError, ObjectReader, SystemSpec, Violation, Violations};
use rare_core::mckalman::{Functional, DEFAULT_K_GRID, MIN_SB_PATHS};
use rare_core::riccati::{DEFAULT_DARE_MAX_ITER, DEFAULT_DARE_TOL};
use rare_core::support::{DEFAULT_DELTA, DEFAULT_NODE_CAP};
use serde::Serialize;
use serde_json::Value;

pub const SYS1D_JSON: &str = include_str!("../configs/sys1d.json");

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FixedPointParams {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for FixedPointParams {
    fn default() -> Self {
        FixedPointParams {
            tol: DEFAULT_DARE_TOL,
            max_iter: DEFAULT_DARE_MAX_ITER,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SupportParams {
    /// Sensors of the anchor atom; the first detectable atom when unset.
    pub anchor: Option<Vec<usize>>,
    pub depth: usize,
    pub delta: f64,
    pub node_cap: usize,
    pub full_alphabet: bool,
}

impl Default for SupportParams {
    fn default() -> Self {
        SupportParams {
            anchor: None,
            depth: 6,
            delta: DEFAULT_DELTA,
            node_cap: DEFAULT_NODE_CAP,
            full_alphabet: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonteCarloParams {
    pub paths: usize,
    pub horizon: usize,
    pub burn_in: usize,
    pub t_star: usize,
    pub functional: Functional,
    /// One ensemble per entry, started from `s * I`.
    pub initial_scales: Vec<f64>,
    /// One seed per ensemble; `seed + k` for ensemble `k` when unset.
    pub seeds: Option<Vec<u64>>,
    pub k_grid: Vec<f64>,
    pub tail_threshold: f64,
    pub divergence_cutoff: f64,
    pub moment_order: u32,
    /// Eleven evenly spaced times from 0 to the horizon when unset.
    pub moment_times: Option<Vec<usize>>,
    /// Filter runs from `P0` checked against the Riccati recursion.
    pub consistency_runs: usize,
    pub trajectories: bool,
}

impl Default for MonteCarloParams {
    fn default() -> Self {
        MonteCarloParams {
            paths: 500,
            horizon: 2000,
            burn_in: 500,
            t_star: 1000,
            functional: Functional::Trace,
            initial_scales: vec![0.0, 100.0],
            seeds: None,
            k_grid: DEFAULT_K_GRID.to_vec(),
            tail_threshold: 0.01,
            divergence_cutoff: 1e6,
            moment_order: 1,
            moment_times: None,
            consistency_runs: 10,
            trajectories: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    #[serde(flatten)]
    pub system: SystemSpec,
    pub seed: u64,
    pub fixed_points: FixedPointParams,
    pub support: SupportParams,
    pub montecarlo: MonteCarloParams,
}

macro_rules! take {
    ($reader:expr, $errs:expr, $target:expr, $key:literal) => {
        if let Ok(Some(v)) = $reader.optional($key, $errs) {
            $target = v;
        }
    };
}

fn section<'a>(root: &mut ObjectReader<'a>, key: &'static str, errs: &mut Violations) -> Option<ObjectReader<'a>> {
    let ptr = root.pointer(key);
    root.raw(key).map(|v| ObjectReader::new(v, &ptr, errs))
}

impl ExperimentConfig {
    pub fn from_value(value: &Value) -> Result<Self, ConfigError> {
        let mut errs = Violations::new();
        let mut root = ObjectReader::new(value, "", &mut errs);
        let system = SystemSpec::read_fields(&mut root, &mut errs);
        let mut seed = 0u64;
        take!(root, &mut errs, seed, "seed");

        let mut fixed_points = FixedPointParams::default();
        if let Some(mut r) = section(&mut root, "fixed_points", &mut errs) {
            take!(r, &mut errs, fixed_points.tol, "tol");
            take!(r, &mut errs, fixed_points.max_iter, "max_iter");
            r.finish(&mut errs);
        }

        let mut support = SupportParams::default();
        if let Some(mut r) = section(&mut root, "support", &mut errs) {
            take!(r, &mut errs, support.anchor, "anchor");
            take!(r, &mut errs, support.depth, "depth");
            take!(r, &mut errs, support.delta, "delta");
            take!(r, &mut errs, support.node_cap, "node_cap");
            take!(r, &mut errs, support.full_alphabet, "full_alphabet");
            r.finish(&mut errs);
        }

        let mut mc = MonteCarloParams::default();
        if let Some(mut r) = section(&mut root, "montecarlo", &mut errs) {
            take!(r, &mut errs, mc.paths, "paths");
            take!(r, &mut errs, mc.horizon, "horizon");
            take!(r, &mut errs, mc.burn_in, "burn_in");
            take!(r, &mut errs, mc.t_star, "t_star");
            take!(r, &mut errs, mc.functional, "functional");
            take!(r, &mut errs, mc.initial_scales, "initial_scales");
            take!(r, &mut errs, mc.seeds, "seeds");
            take!(r, &mut errs, mc.k_grid, "k_grid");
            take!(r, &mut errs, mc.tail_threshold, "tail_threshold");
            take!(r, &mut errs, mc.divergence_cutoff, "divergence_cutoff");
            take!(r, &mut errs, mc.moment_order, "moment_order");
            take!(r, &mut errs, mc.moment_times, "moment_times");
            take!(r, &mut errs, mc.consistency_runs, "consistency_runs");
            take!(r, &mut errs, mc.trajectories, "trajectories");
            r.finish(&mut errs);
        }
        root.finish(&mut errs);

        let config = system.map(|system| ExperimentConfig {
            system,
            seed,
            fixed_points,
            support,
            montecarlo: mc,
        });
        if let Some(c) = &config {
            for v in c.check() {
                errs.push(v.pointer, v.message);
            }
        }
        errs.into_result(config)
    }

    pub fn from_json_str(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let value: Value = serde_json::from_str(text).map_err(|source| ConfigError::Syntax {
            path: origin.to_string(),
            source,
        })?;
        Self::from_value(&value)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::from_json_str(&read_file(path)?, &path.display().to_string())
    }

    pub fn bundled_sys1d() -> Self {
        Self::from_json_str(SYS1D_JSON, "configs/sys1d.json").expect("bundled config is valid")
    }

    /// Range and consistency checks on parameters, also run after command
    /// line overrides.
    pub fn check(&self) -> Vec<Violation> {
        let mut errs = Vec::new();
        let mut bad = |pointer: &str, message: String| {
            errs.push(Violation {
                pointer: pointer.to_string(),
                message,
            })
        };
        let fp = &self.fixed_points;
        if !(fp.tol > 0.0) {
            bad("/fixed_points/tol", format!("must be positive, got {}", fp.tol));
        }
        if fp.max_iter == 0 {
            bad("/fixed_points/max_iter", "must be at least 1".into());
        }

        let sp = &self.support;
        if !(sp.delta > 0.0) {
            bad("/support/delta", format!("must be positive, got {}", sp.delta));
        }
        if sp.node_cap == 0 {
            bad("/support/node_cap", "must be at least 1".into());
        }
        if let Some(anchor) = &sp.anchor {
            let n = self.system.network.sensors.len();
            if anchor.is_empty() {
                bad("/support/anchor", "the anchor must contain at least one sensor".into());
            } else if let Some(s) = anchor.iter().find(|&&s| s == 0 || s > n) {
                bad("/support/anchor", format!("sensor {s} is out of range 1..={n}"));
            }
        }

        let mc = &self.montecarlo;
        if mc.paths == 0 {
            bad("/montecarlo/paths", "must be at least 1".into());
        }
        if mc.horizon == 0 {
            bad("/montecarlo/horizon", "must be at least 1".into());
        }
        if mc.burn_in >= mc.horizon {
            bad("/montecarlo/burn_in", format!("must be below the horizon {}", mc.horizon));
        }
        if mc.t_star == 0 || 2 * mc.t_star > mc.horizon {
            bad(
                "/montecarlo/t_star",
                format!("must satisfy 1 <= t_star and 2 * t_star <= horizon ({})", mc.horizon),
            );
        }
        if mc.initial_scales.is_empty() {
            bad("/montecarlo/initial_scales", "needs at least one entry".into());
        }
        if mc.initial_scales.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            bad("/montecarlo/initial_scales", "scales must be finite and non-negative".into());
        }
        if let Some(seeds) = &mc.seeds {
            if seeds.len() != mc.initial_scales.len() {
                bad(
                    "/montecarlo/seeds",
                    format!("expected {} seeds, one per initial scale, found {}", mc.initial_scales.len(), seeds.len()),
                );
            }
        }
        if mc.k_grid.is_empty() || mc.k_grid.iter().any(|k| !(k.is_finite() && *k > 0.0)) {
            bad("/montecarlo/k_grid", "needs at least one finite positive level".into());
        }
        if !(mc.tail_threshold > 0.0 && mc.tail_threshold <= 1.0) {
            bad("/montecarlo/tail_threshold", format!("must lie in (0, 1], got {}", mc.tail_threshold));
        }
        if !(mc.divergence_cutoff > 0.0) {
            bad("/montecarlo/divergence_cutoff", format!("must be positive, got {}", mc.divergence_cutoff));
        }
        if mc.moment_order == 0 {
            bad("/montecarlo/moment_order", "must be at least 1".into());
        }
        if let Some(times) = &mc.moment_times {
            if times.is_empty() || times.iter().any(|&t| t > mc.horizon) {
                bad(
                    "/montecarlo/moment_times",
                    format!("needs at least one time, all within the horizon {}", mc.horizon),
                );
            }
        }
        if mc.consistency_runs > mc.paths {
            bad("/montecarlo/consistency_runs", format!("must not exceed paths ({})", mc.paths));
        }
        errs
    }

    /// Fill in values whose defaults depend on other parameters.
    pub fn resolve(&mut self) {
        let mc = &mut self.montecarlo;
        if mc.seeds.is_none() {
            mc.seeds = Some((0..mc.initial_scales.len() as u64).map(|k| self.seed.wrapping_add(k)).collect());
        }
        if mc.moment_times.is_none() {
            let h = mc.horizon;
            let mut times: Vec<usize> = (0..=10).map(|k| k * h / 10).collect();
            times.dedup();
            mc.moment_times = Some(times);
        }
    }

    pub fn sb_paths_ok(&self) -> bool {
        self.montecarlo.paths >= MIN_SB_PATHS
    }

    pub fn to_json_pretty(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }
}
