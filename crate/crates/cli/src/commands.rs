use rare_core::analysis::{analyze, detectable_subsets, AnalysisReport};
use rare_core::mckalman::{
    ks_two_sample, moment_estimate, pathwise_consistency, run_filter, simulate_ensemble,
    stochastic_boundedness_diagnostic, EmpiricalDistribution, Ensemble, EnsembleSpec, MomentCurve, SampleAt,
    SbOptions, TailTable, MIN_SB_PATHS,
};
use rare_core::riccati::{dare_fixed_point, FixedPoint};
use rare_core::rng::PathSeed;
use rare_core::support::{enumerate_support, Alphabet, SupportOptions, SupportSet};
use rare_core::{CovMatrix, Error, Schedule, SensorNetwork, SubsetId};
use serde::Serialize;
use serde_json::{json, Value};

use crate::artifacts::{fmt_f64, upper_triangle_columns, CsvTable};
use crate::error::CliResult;
use crate::experiment::ExperimentConfig;

pub struct Context {
    pub config: ExperimentConfig,
    pub net: SensorNetwork,
    pub schedule: Schedule,
}

impl Context {
    pub fn new(config: ExperimentConfig) -> CliResult<Self> {
        let (net, schedule) = config.system.build()?;
        Ok(Context { config, net, schedule })
    }
}

pub fn run_analyze(ctx: &Context) -> CliResult<AnalysisReport> {
    Ok(analyze(&ctx.net, &ctx.schedule)?)
}

#[derive(Debug, Serialize)]
pub struct AtomFixedPoint {
    pub subset: SubsetId,
    pub prob: f64,
    pub detectable: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fixed_point: Option<FixedPoint>,
}

#[derive(Debug, Serialize)]
pub struct FixedPointsReport {
    pub tol: f64,
    pub max_iter: usize,
    pub atoms: Vec<AtomFixedPoint>,
}

/// Fixed points of every detectable non-empty atom; fails when there is none.
pub fn run_fixed_points(ctx: &Context) -> CliResult<FixedPointsReport> {
    let params = &ctx.config.fixed_points;
    let detectable = detectable_subsets(&ctx.net, &ctx.schedule)?;
    if detectable.is_empty() {
        return Err(Error::NotWeaklyDetectable.into());
    }
    let mut atoms = Vec::new();
    for &(subset, prob) in ctx.schedule.atoms() {
        if subset.is_empty() {
            continue;
        }
        let is_detectable = detectable.contains(&subset);
        let fixed_point = if is_detectable {
            Some(dare_fixed_point(&ctx.net, subset, params.tol, params.max_iter)?)
        } else {
            None
        };
        atoms.push(AtomFixedPoint {
            subset,
            prob,
            detectable: is_detectable,
            fixed_point,
        });
    }
    Ok(FixedPointsReport {
        tol: params.tol,
        max_iter: params.max_iter,
        atoms,
    })
}

pub struct SupportOutput {
    pub set: SupportSet,
    pub summary: Value,
    pub csv: Vec<u8>,
}

/// Enumerates from the configured anchor, or from the first detectable atom,
/// which is then written back into the config.
pub fn run_support(ctx: &mut Context) -> CliResult<SupportOutput> {
    let anchor = match &ctx.config.support.anchor {
        Some(sensors) => SubsetId::from_sensors(sensors)?,
        None => {
            let first = *detectable_subsets(&ctx.net, &ctx.schedule)?
                .first()
                .ok_or(Error::NotWeaklyDetectable)?;
            ctx.config.support.anchor = Some(first.sensors());
            first
        }
    };
    let params = &ctx.config.support;
    let opts = SupportOptions {
        depth: params.depth,
        node_cap: params.node_cap,
        delta: params.delta,
        alphabet: if params.full_alphabet {
            Alphabet::Full
        } else {
            Alphabet::Schedule
        },
    };
    let set = enumerate_support(&ctx.net, &ctx.schedule, anchor, &opts)?;

    let columns = upper_triangle_columns(ctx.net.state_dim());
    let mut header = vec!["index".to_string(), "depth".into(), "word".into()];
    header.extend(columns.iter().cloned());
    let mut table = CsvTable::new(&header);
    for (k, p) in set.points.iter().enumerate() {
        let mut row = vec![k.to_string(), p.depth().to_string(), p.word_string()];
        row.extend(p.cov.upper_triangle_col_major().into_iter().map(fmt_f64));
        table.row(row);
    }
    let summary = json!({
        "anchor": anchor,
        "fixed_point": set.fixed_point,
        "depth": set.depth,
        "delta": set.delta,
        "alphabet": set.alphabet,
        "points": set.len(),
        "counts_per_depth": set.counts_per_depth,
        "depth_truncated": set.depth_truncated,
        "cap_reached": set.cap_reached,
        "columns": columns,
    });
    Ok(SupportOutput {
        set,
        summary,
        csv: table.into_bytes(),
    })
}

#[derive(Debug, Serialize)]
pub struct DistributionSummary {
    pub samples: usize,
    pub mean: f64,
    pub q05: f64,
    pub q50: f64,
    pub q95: f64,
}

impl From<&EmpiricalDistribution> for DistributionSummary {
    fn from(e: &EmpiricalDistribution) -> Self {
        DistributionSummary {
            samples: e.len(),
            mean: e.mean(),
            q05: e.quantile(0.05),
            q50: e.quantile(0.5),
            q95: e.quantile(0.95),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct EnsembleSummary {
    pub initial_scale: f64,
    pub seed: u64,
    pub at_t_star: DistributionSummary,
    pub at_two_t_star: DistributionSummary,
    /// All `t > burn_in` of all paths; serially dependent, diagnostic only.
    pub pooled_after_burn_in: DistributionSummary,
    /// `null` below the minimum number of paths.
    pub tail_table: Option<TailTable>,
    pub moments: MomentCurve,
    /// Smallest eigenvalue of `P(t) - Q` over all paths and `t >= 1`.
    pub floor_margin: f64,
}

#[derive(Debug, Serialize)]
pub struct KsRow {
    pub ensembles: [usize; 2],
    pub t_star: f64,
    pub two_t_star: f64,
}

#[derive(Debug, Serialize)]
pub struct ConsistencySummary {
    pub runs: usize,
    /// Largest `max_t ||P_filter - P_replay|| / (1 + max_t ||P||)`.
    pub max_relative_deviation: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct MonteCarloReport {
    pub functional: &'static str,
    pub paths: usize,
    pub horizon: usize,
    pub t_star: usize,
    pub burn_in: usize,
    pub ensembles: Vec<EnsembleSummary>,
    pub ks: Vec<KsRow>,
    pub consistency: ConsistencySummary,
}

pub struct MonteCarloOutput {
    pub report: MonteCarloReport,
    pub samples_csv: Vec<u8>,
    pub trajectories_csv: Option<Vec<u8>>,
}

pub fn run_montecarlo(ctx: &Context) -> CliResult<MonteCarloOutput> {
    let mc = &ctx.config.montecarlo;
    let seeds = mc.seeds.clone().expect("resolved config");
    let times = mc.moment_times.clone().expect("resolved config");
    let (t1, t2) = (mc.t_star, 2 * mc.t_star);
    let n = ctx.net.state_dim();
    let opts = SbOptions {
        tail_threshold: mc.tail_threshold,
        divergence_cutoff: mc.divergence_cutoff,
    };

    let mut ensembles: Vec<Ensemble> = Vec::new();
    let mut summaries = Vec::new();
    for (&scale, &seed) in mc.initial_scales.iter().zip(&seeds) {
        let p0 = CovMatrix::new(CovMatrix::identity(n).scaled(scale))?;
        let spec = EnsembleSpec {
            paths: mc.paths,
            horizon: mc.horizon,
            seed,
            p0,
            functional: mc.functional,
        };
        let ens = simulate_ensemble(&ctx.net, &ctx.schedule, &spec)?;
        let tail_table = if mc.paths >= MIN_SB_PATHS {
            Some(stochastic_boundedness_diagnostic(&ens, &mc.k_grid, opts)?)
        } else {
            None
        };
        summaries.push(EnsembleSummary {
            initial_scale: scale,
            seed,
            at_t_star: (&ens.distribution(SampleAt::Time(t1), mc.burn_in)?).into(),
            at_two_t_star: (&ens.distribution(SampleAt::Time(t2), mc.burn_in)?).into(),
            pooled_after_burn_in: (&ens.distribution(SampleAt::Pooled, mc.burn_in)?).into(),
            tail_table,
            moments: moment_estimate(&ens, mc.moment_order, &times, seed)?,
            floor_margin: ens.floor_margin,
        });
        ensembles.push(ens);
    }

    let mut ks = Vec::new();
    for e in 1..ensembles.len() {
        ks.push(KsRow {
            ensembles: [0, e],
            t_star: ks_two_sample(&ensembles[0].values_at(t1), &ensembles[e].values_at(t1))?,
            two_t_star: ks_two_sample(&ensembles[0].values_at(t2), &ensembles[e].values_at(t2))?,
        });
    }

    let mut worst: Option<f64> = None;
    for k in 0..mc.consistency_runs {
        let run = run_filter(&ctx.net, &ctx.schedule, mc.horizon, PathSeed::new(seeds[0], k as u64))?;
        let c = pathwise_consistency(&ctx.net, &run)?;
        let ratio = c.max_deviation / c.scale;
        worst = Some(worst.map_or(ratio, |w: f64| w.max(ratio)));
    }

    let mut samples = CsvTable::new(&["ensemble", "initial_scale", "path", "value_t_star", "value_two_t_star"]);
    for (e, ens) in ensembles.iter().enumerate() {
        let scale = fmt_f64(mc.initial_scales[e]);
        for (k, v) in ens.values.iter().enumerate() {
            samples.row([e.to_string(), scale.clone(), k.to_string(), fmt_f64(v[t1]), fmt_f64(v[t2])]);
        }
    }
    let trajectories_csv = mc.trajectories.then(|| {
        let mut t = CsvTable::new(&["ensemble", "path", "t", "value", "norm"]);
        for (e, ens) in ensembles.iter().enumerate() {
            for (k, (vals, norms)) in ens.values.iter().zip(&ens.norms).enumerate() {
                for (step, (v, nv)) in vals.iter().zip(norms).enumerate() {
                    t.row([e.to_string(), k.to_string(), step.to_string(), fmt_f64(*v), fmt_f64(*nv)]);
                }
            }
        }
        t.into_bytes()
    });

    Ok(MonteCarloOutput {
        report: MonteCarloReport {
            functional: mc.functional.name(),
            paths: mc.paths,
            horizon: mc.horizon,
            t_star: t1,
            burn_in: mc.burn_in,
            ensembles: summaries,
            ks,
            consistency: ConsistencySummary {
                runs: mc.consistency_runs,
                max_relative_deviation: worst,
            },
        },
        samples_csv: samples.into_bytes(),
        trajectories_csv,
    })
}
