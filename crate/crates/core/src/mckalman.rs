//! Monte Carlo harness: the time-varying Kalman predictor with
//! acknowledgements, pathwise checks against the Riccati recursion, empirical
//! laws of scalar functionals of `P(t)`, and stability diagnostics.
//!
//! The estimator always learns `I(t)`, including when no data arrives, so the
//! state stays conditionally Gaussian and the covariance obeys the random
//! Riccati recursion exactly.

use std::str::FromStr;

use nalgebra::DVector;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matcone::{chol_solve, distance, spectral_norm, CovMatrix};
use crate::riccati::{rare_step, replay, MapFamily, RareTrajectory};
use crate::rng::{stream, PathSeed, Purpose};
use crate::sysmodel::{
    sample_subset, simulate_observations, simulate_signal, ObsTrajectory, Schedule, SensorNetwork, StateTrajectory,
    SubsetId,
};

/// Scalar summary of a covariance used for distributional comparisons.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Functional {
    #[default]
    Trace,
    SpectralNorm,
    LogDet,
}

impl Functional {
    pub fn apply(self, p: &CovMatrix) -> f64 {
        match self {
            Functional::Trace => p.trace(),
            Functional::SpectralNorm => spectral_norm(p),
            Functional::LogDet => p.log_det(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Functional::Trace => "trace",
            Functional::SpectralNorm => "spectral-norm",
            Functional::LogDet => "log-det",
        }
    }
}

impl FromStr for Functional {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "trace" => Ok(Functional::Trace),
            "spectral-norm" => Ok(Functional::SpectralNorm),
            "log-det" => Ok(Functional::LogDet),
            other => Err(Error::InvalidArgument(format!(
                "unknown functional {other:?} (expected trace, spectral-norm or log-det)"
            ))),
        }
    }
}

/// Anything that exposes `P(0), ..., P(T)`.
pub trait CovPath {
    fn horizon(&self) -> usize;
    fn cov_at(&self, t: usize) -> &CovMatrix;
}

impl CovPath for RareTrajectory {
    fn horizon(&self) -> usize {
        RareTrajectory::horizon(self)
    }

    fn cov_at(&self, t: usize) -> &CovMatrix {
        RareTrajectory::cov_at(self, t)
    }
}

/// One jointly simulated signal, observation and filter path.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterRun {
    pub seed: PathSeed,
    pub states: StateTrajectory,
    pub obs: ObsTrajectory,
    /// One-step predictions `x̂(t|t-1)`, `t = 0..=T`.
    pub xhat: Vec<DVector<f64>>,
    pub covs: RareTrajectory,
}

impl CovPath for FilterRun {
    fn horizon(&self) -> usize {
        self.covs.horizon()
    }

    fn cov_at(&self, t: usize) -> &CovMatrix {
        self.covs.cov_at(t)
    }
}

fn predictor_step(
    maps: &MapFamily<'_>,
    i: SubsetId,
    y: Option<&DVector<f64>>,
    xhat: &DVector<f64>,
    p: &CovMatrix,
) -> Result<(DVector<f64>, CovMatrix)> {
    let net = maps.network();
    let next_p = maps.apply(i, p)?;
    let ax = net.a() * xhat;
    match (i.is_empty(), y) {
        (true, None) => Ok((ax, next_p)),
        (false, Some(y)) => {
            let model = net.stacked_model(i)?;
            if y.len() != model.c.nrows() {
                return Err(Error::dims(format!("observation of subset {i}"), model.c.nrows(), y.len()));
            }
            let cp = &model.c * p.as_matrix();
            let innovation_cov = CovMatrix::from_matrix(&cp * model.c.transpose() + model.r.as_matrix())?;
            // K = A P C^T S^{-1} = (S^{-1} C P A^T)^T
            let gain = chol_solve(&innovation_cov, &(&cp * net.a().transpose()))?.transpose();
            let innovation = y - &model.c * xhat;
            Ok((ax + gain * innovation, next_p))
        }
        (true, Some(_)) => Err(Error::InvalidArgument("observation supplied for the empty subset".into())),
        (false, None) => Err(Error::InvalidArgument(format!("missing observation for subset {i}"))),
    }
}

/// One predictor update: `x̂' = A x̂ + K (y - C^i x̂)` and `P' = f_i(P)`.
/// `y` must be `None` exactly when `i` is empty.
pub fn kalman_predictor_step(
    net: &SensorNetwork,
    i: SubsetId,
    y: Option<&DVector<f64>>,
    xhat: &DVector<f64>,
    p: &CovMatrix,
) -> Result<(DVector<f64>, CovMatrix)> {
    let maps = MapFamily::new(net, [i])?;
    predictor_step(&maps, i, y, xhat, p)
}

/// Subset sequence of a path. The same stream drives [`ensemble_path`], so a
/// filter run and a bare covariance path with equal `PathSeed` share `I(t)`.
fn draw_subsets(schedule: &Schedule, seed: PathSeed, horizon: usize) -> Vec<SubsetId> {
    let mut rng = seed.stream(Purpose::Schedule);
    (0..horizon).map(|_| sample_subset(schedule, &mut rng)).collect()
}

/// Simulate `x`, `I` and `y` for one path and run the predictor from
/// `x̂(0|-1) = 0`, `P(0) = P0`.
pub fn run_filter(net: &SensorNetwork, schedule: &Schedule, horizon: usize, seed: PathSeed) -> Result<FilterRun> {
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    schedule.check_against(net)?;
    let subsets = draw_subsets(schedule, seed, horizon);
    let states = simulate_signal(net, horizon, &mut seed.stream(Purpose::ProcessNoise))?;
    let obs = simulate_observations(net, &states, &subsets, &mut seed.stream(Purpose::ObservationNoise))?;
    let maps = MapFamily::for_schedule(net, schedule)?;

    let mut xhat = Vec::with_capacity(horizon + 1);
    let mut steps = Vec::with_capacity(horizon);
    let mut x = DVector::zeros(net.state_dim());
    let mut p = net.p0().clone();
    xhat.push(x.clone());
    for (t, slot) in obs.slots.iter().enumerate() {
        let (nx, np) = predictor_step(&maps, slot.subset, slot.y.as_ref(), &x, &p).map_err(|e| e.at_step(t))?;
        x = nx;
        p = np;
        xhat.push(x.clone());
        steps.push((slot.subset, p.clone()));
    }
    Ok(FilterRun {
        seed,
        states,
        obs,
        xhat,
        covs: RareTrajectory {
            initial: net.p0().clone(),
            steps,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Consistency {
    /// `max_t ||P_filter(t) - P_replay(t)||`.
    pub max_deviation: f64,
    /// `1 + max_t ||P(t)||`.
    pub scale: f64,
    pub steps: usize,
}

impl Consistency {
    pub fn within(&self, rel_tol: f64) -> bool {
        self.max_deviation <= rel_tol * self.scale
    }
}

/// Replay the run's subset sequence through [`rare_step`] from `P0` and compare.
pub fn pathwise_consistency(net: &SensorNetwork, run: &FilterRun) -> Result<Consistency> {
    let mut p = run.covs.initial.clone();
    let mut max_deviation: f64 = 0.0;
    let mut max_norm = spectral_norm(&p);
    for (t, slot) in run.obs.slots.iter().enumerate() {
        p = rare_step(net, slot.subset, &p).map_err(|e| e.at_step(t))?;
        let filtered = run.covs.cov_at(t + 1);
        max_deviation = max_deviation.max(distance(&p, filtered)?);
        max_norm = max_norm.max(spectral_norm(&p)).max(spectral_norm(filtered));
    }
    Ok(Consistency {
        max_deviation,
        scale: 1.0 + max_norm,
        steps: run.obs.slots.len(),
    })
}

/// Bare covariance path for one Monte Carlo index.
pub fn ensemble_path(
    maps: &MapFamily<'_>,
    schedule: &Schedule,
    p0: &CovMatrix,
    horizon: usize,
    seed: PathSeed,
) -> Result<RareTrajectory> {
    replay(maps, p0, draw_subsets(schedule, seed, horizon))
}

/// Where to sample each path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SampleAt {
    /// One sample per path at a fixed time.
    Time(usize),
    /// Every `t > burn_in` of every path; serially dependent, diagnostic only.
    Pooled,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmpiricalDistribution {
    /// Ascending.
    pub samples: Vec<f64>,
    pub functional: Functional,
    pub burn_in: usize,
    pub sample_at: SampleAt,
}

impl EmpiricalDistribution {
    pub fn from_samples(mut samples: Vec<f64>, functional: Functional, burn_in: usize, sample_at: SampleAt) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptySample);
        }
        if samples.iter().any(|v| v.is_nan()) {
            return Err(Error::NonFinite("empirical sample".into()));
        }
        samples.sort_by(f64::total_cmp);
        Ok(EmpiricalDistribution {
            samples,
            functional,
            burn_in,
            sample_at,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn is_pooled(&self) -> bool {
        self.sample_at == SampleAt::Pooled
    }

    pub fn mean(&self) -> f64 {
        self.samples.iter().sum::<f64>() / self.samples.len() as f64
    }

    /// Empirical quantile by the nearest-rank rule.
    pub fn quantile(&self, q: f64) -> f64 {
        let n = self.samples.len();
        let rank = ((q.clamp(0.0, 1.0) * n as f64).ceil() as usize).clamp(1, n);
        self.samples[rank - 1]
    }
}

fn sample_times(horizon: usize, burn_in: usize, sample_at: SampleAt) -> Result<Vec<usize>> {
    if burn_in >= horizon {
        return Err(Error::InvalidArgument(format!("burn-in {burn_in} must be below the horizon {horizon}")));
    }
    match sample_at {
        SampleAt::Time(t) if t > horizon => {
            Err(Error::InvalidArgument(format!("sample time {t} is beyond the horizon {horizon}")))
        }
        SampleAt::Time(t) => Ok(vec![t]),
        SampleAt::Pooled => Ok(((burn_in + 1)..=horizon).collect()),
    }
}

/// Empirical law of `functional(P(t))` across paths.
pub fn empirical_functional_distribution<P: CovPath>(
    paths: &[P],
    functional: Functional,
    burn_in: usize,
    sample_at: SampleAt,
) -> Result<EmpiricalDistribution> {
    let mut samples = Vec::new();
    for path in paths {
        for t in sample_times(path.horizon(), burn_in, sample_at)? {
            samples.push(functional.apply(path.cov_at(t)));
        }
    }
    EmpiricalDistribution::from_samples(samples, functional, burn_in, sample_at)
}

/// Two-sample Kolmogorov-Smirnov statistic `sup_x |F1(x) - F2(x)|`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySample);
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        // advance past every copy of the smaller value in both samples
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(d)
}

pub fn ks_distributions(e1: &EmpiricalDistribution, e2: &EmpiricalDistribution) -> Result<f64> {
    ks_two_sample(&e1.samples, &e2.samples)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleSpec {
    pub paths: usize,
    pub horizon: usize,
    pub seed: u64,
    pub p0: CovMatrix,
    pub functional: Functional,
}

/// Per-path scalar records of many covariance paths.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub functional: Functional,
    pub horizon: usize,
    /// `values[path][t] = functional(P(t))`, `t = 0..=T`.
    pub values: Vec<Vec<f64>>,
    /// `norms[path][t] = ||P(t)||`.
    pub norms: Vec<Vec<f64>>,
    /// `min over paths and t >= 1` of the smallest eigenvalue of `P(t) - Q`.
    pub floor_margin: f64,
}

struct PathRecord {
    values: Vec<f64>,
    norms: Vec<f64>,
    floor: f64,
}

fn record_path(path: &impl CovPath, functional: Functional, q: &CovMatrix) -> Result<PathRecord> {
    let n = path.horizon() + 1;
    let mut values = Vec::with_capacity(n);
    let mut norms = Vec::with_capacity(n);
    let mut floor = f64::INFINITY;
    for t in 0..n {
        let p = path.cov_at(t);
        values.push(functional.apply(p));
        norms.push(spectral_norm(p));
        if t >= 1 {
            floor = floor.min(p.try_sub(q)?.min_eigenvalue());
        }
    }
    Ok(PathRecord { values, norms, floor })
}

impl Ensemble {
    pub fn from_paths<P: CovPath>(paths: &[P], functional: Functional, q: &CovMatrix) -> Result<Self> {
        let records: Vec<PathRecord> = paths.iter().map(|p| record_path(p, functional, q)).collect::<Result<_>>()?;
        Self::from_records(records, functional)
    }

    fn from_records(records: Vec<PathRecord>, functional: Functional) -> Result<Self> {
        let horizon = records.first().ok_or(Error::EmptySample)?.values.len() - 1;
        if records.iter().any(|r| r.values.len() != horizon + 1) {
            return Err(Error::InvalidArgument("paths of an ensemble must share a horizon".into()));
        }
        let floor_margin = records.iter().map(|r| r.floor).fold(f64::INFINITY, f64::min);
        let (values, norms) = records.into_iter().map(|r| (r.values, r.norms)).unzip();
        Ok(Ensemble {
            functional,
            horizon,
            values,
            norms,
            floor_margin,
        })
    }

    pub fn paths(&self) -> usize {
        self.values.len()
    }

    pub fn values_at(&self, t: usize) -> Vec<f64> {
        self.values.iter().map(|v| v[t]).collect()
    }

    pub fn norms_at(&self, t: usize) -> Vec<f64> {
        self.norms.iter().map(|v| v[t]).collect()
    }

    pub fn distribution(&self, sample_at: SampleAt, burn_in: usize) -> Result<EmpiricalDistribution> {
        let times = sample_times(self.horizon, burn_in, sample_at)?;
        let samples = self.values.iter().flat_map(|v| times.iter().map(move |&t| v[t])).collect();
        EmpiricalDistribution::from_samples(samples, self.functional, burn_in, sample_at)
    }
}

/// Simulate `spec.paths` independent covariance paths in parallel. Path `k`
/// uses the streams of `PathSeed::new(spec.seed, k)`; results are collected in
/// path order, so the output does not depend on the thread count.
pub fn simulate_ensemble(net: &SensorNetwork, schedule: &Schedule, spec: &EnsembleSpec) -> Result<Ensemble> {
    if spec.paths == 0 || spec.horizon == 0 {
        return Err(Error::InvalidArgument("ensemble needs at least one path and horizon >= 1".into()));
    }
    if spec.p0.dim() != net.state_dim() {
        return Err(Error::dims("initial covariance", net.state_dim(), spec.p0.dim()));
    }
    schedule.check_against(net)?;
    let maps = MapFamily::for_schedule(net, schedule)?;
    let records: Vec<PathRecord> = (0..spec.paths as u64)
        .into_par_iter()
        .map(|k| {
            let seed = PathSeed::new(spec.seed, k);
            let mut rng = seed.stream(Purpose::Schedule);
            let mut p = spec.p0.clone();
            let n = spec.horizon + 1;
            let mut values = Vec::with_capacity(n);
            let mut norms = Vec::with_capacity(n);
            values.push(spec.functional.apply(&p));
            norms.push(spectral_norm(&p));
            let mut floor = f64::INFINITY;
            for t in 0..spec.horizon {
                let i = sample_subset(schedule, &mut rng);
                p = maps.apply(i, &p).map_err(|e| e.at_step(t))?;
                values.push(spec.functional.apply(&p));
                norms.push(spectral_norm(&p));
                floor = floor.min(p.try_sub(net.q())?.min_eigenvalue());
            }
            Ok(PathRecord { values, norms, floor })
        })
        .collect::<Result<_>>()?;
    Ensemble::from_records(records, spec.functional)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SbVerdict {
    ConsistentWithSb,
    Divergent,
    Inconclusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SbOptions {
    /// Tail fraction at the largest `K` below which paths look tight.
    pub tail_threshold: f64,
    /// Median `||P_t||` over the last quarter above which paths diverge.
    pub divergence_cutoff: f64,
}

impl Default for SbOptions {
    fn default() -> Self {
        SbOptions {
            tail_threshold: 0.01,
            divergence_cutoff: 1e6,
        }
    }
}

pub const DEFAULT_K_GRID: [f64; 8] = [1e1, 1e2, 1e3, 1e4, 1e5, 1e6, 1e7, 1e8];
pub const MIN_SB_PATHS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailRow {
    pub k: f64,
    /// `sup_t` fraction of paths with `||P_t|| > K`.
    pub sup_tail: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailTable {
    pub rows: Vec<TailRow>,
    pub median_final_quarter: f64,
    pub verdict: SbVerdict,
    pub options: SbOptions,
}

impl TailTable {
    pub fn tail_at(&self, k: f64) -> Option<f64> {
        self.rows.iter().find(|r| r.k == k).map(|r| r.sup_tail)
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Empirical version of `lim_K sup_t P(||P_t|| > K) = 0`.
pub fn stochastic_boundedness_diagnostic(ens: &Ensemble, k_grid: &[f64], opts: SbOptions) -> Result<TailTable> {
    if ens.paths() < MIN_SB_PATHS {
        return Err(Error::InvalidArgument(format!(
            "stochastic boundedness needs at least {MIN_SB_PATHS} paths, got {}",
            ens.paths()
        )));
    }
    if k_grid.is_empty() {
        return Err(Error::InvalidArgument("empty K grid".into()));
    }
    let mut grid = k_grid.to_vec();
    grid.sort_by(f64::total_cmp);
    let n = ens.paths() as f64;
    let mut sup = vec![0.0f64; grid.len()];
    for t in 1..=ens.horizon {
        for (s, &k) in sup.iter_mut().zip(&grid) {
            let above = ens.norms.iter().filter(|v| v[t] > k).count() as f64;
            *s = s.max(above / n);
        }
    }
    let start = (3 * ens.horizon / 4 + 1).min(ens.horizon);
    let last_quarter: Vec<f64> = ens.norms.iter().flat_map(|v| v[start..=ens.horizon].iter().copied()).collect();
    let median_final_quarter = median(last_quarter);
    let verdict = if median_final_quarter > opts.divergence_cutoff {
        SbVerdict::Divergent
    } else if *sup.last().expect("non-empty grid") < opts.tail_threshold {
        SbVerdict::ConsistentWithSb
    } else {
        SbVerdict::Inconclusive
    };
    Ok(TailTable {
        rows: grid.into_iter().zip(sup).map(|(k, sup_tail)| TailRow { k, sup_tail }).collect(),
        median_final_quarter,
        verdict,
        options: opts,
    })
}

pub const BOOTSTRAP_RESAMPLES: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentPoint {
    pub t: usize,
    pub mean: f64,
    pub std_err: f64,
    /// The top 1% of samples carry more than half of the mean.
    pub heavy_tail: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentCurve {
    pub order: u32,
    pub points: Vec<MomentPoint>,
}

impl MomentCurve {
    pub fn mean_at(&self, t: usize) -> Option<f64> {
        self.points.iter().find(|p| p.t == t).map(|p| p.mean)
    }
}

/// Sample `k`-th moments of `||P_t||` on a time grid with bootstrap standard
/// errors. No boundedness verdict: sample moments of heavy-tailed laws are
/// unreliable, hence the `heavy_tail` flag.
pub fn moment_estimate(ens: &Ensemble, order: u32, times: &[usize], bootstrap_seed: u64) -> Result<MomentCurve> {
    if order == 0 {
        return Err(Error::InvalidArgument("moment order must be at least 1".into()));
    }
    let mut points = Vec::with_capacity(times.len());
    for &t in times {
        if t > ens.horizon {
            return Err(Error::InvalidArgument(format!("time {t} is beyond the horizon {}", ens.horizon)));
        }
        let xs: Vec<f64> = ens.norms.iter().map(|v| v[t].powi(order as i32)).collect();
        let n = xs.len();
        let total: f64 = xs.iter().sum();
        let mean = total / n as f64;
        let mut rng = stream(bootstrap_seed, t as u64, Purpose::Bootstrap);
        let means: Vec<f64> = (0..BOOTSTRAP_RESAMPLES)
            .map(|_| (0..n).map(|_| xs[rng.random_range(0..n)]).sum::<f64>() / n as f64)
            .collect();
        let bm = means.iter().sum::<f64>() / means.len() as f64;
        let std_err = (means.iter().map(|m| (m - bm).powi(2)).sum::<f64>() / (means.len() - 1) as f64).sqrt();
        let mut sorted = xs;
        sorted.sort_by(|a, b| b.total_cmp(a));
        let top = n.div_ceil(100);
        let top_sum: f64 = sorted[..top].iter().sum();
        points.push(MomentPoint {
            t,
            mean,
            std_err,
            heavy_tail: total > 0.0 && top_sum > 0.5 * total,
        });
    }
    Ok(MomentCurve { order, points })
}
