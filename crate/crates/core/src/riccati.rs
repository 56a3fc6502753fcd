//! The map family of the random algebraic Riccati equation.
//!
//! `f_0(X) = A X A^T + Q` applies when no sensor reports and
//! `f_i(X) = A X A^T + Q - A X C_i^T (C_i X C_i^T + R_i)^{-1} C_i X A^T`
//! when subset `i` reports. The covariance recursion is
//! `P(t+1) = f_{I(t)}(P(t))` with i.i.d. `I(t)`.

use std::collections::HashMap;

use nalgebra::DMatrix;
use rand::Rng;
use serde::Serialize;

use crate::analysis::{is_stabilizable, subset_detectability};
use crate::error::{Error, Result};
use crate::matcone::{chol_solve, distance, spectral_norm, CovMatrix};
use crate::sysmodel::{sample_subset, Schedule, SensorNetwork, StackedObsModel, SubsetId};

pub const DEFAULT_DARE_TOL: f64 = 1e-12;
pub const DEFAULT_DARE_MAX_ITER: usize = 100_000;

fn lyapunov(a: &DMatrix<f64>, q: &CovMatrix, x: &CovMatrix) -> Result<CovMatrix> {
    let axa = a * x.as_matrix() * a.transpose();
    CovMatrix::from_map_output(axa + q.as_matrix())
}

/// Evaluated as `A M A^T + Q` with the posterior `M` in Joseph form
/// `(I - K C) X (I - K C)^T + K R K^T`, `K = X C^T S^{-1}`. This equals the
/// textbook expression but stays PSD when `X` has directions of size 1e15 and
/// more, where `A X A^T - A X C^T S^{-1} C X A^T` cancels catastrophically.
fn riccati(a: &DMatrix<f64>, q: &CovMatrix, model: &StackedObsModel, x: &CovMatrix) -> Result<CovMatrix> {
    let n = x.dim();
    let cx = &model.c * x.as_matrix();
    let innovation = CovMatrix::from_matrix(&cx * model.c.transpose() + model.r.as_matrix())?;
    let k = chol_solve(&innovation, &cx)?.transpose();
    let ikc = DMatrix::identity(n, n) - &k * &model.c;
    let posterior = &ikc * x.as_matrix() * ikc.transpose() + &k * model.r.as_matrix() * k.transpose();
    CovMatrix::from_map_output(a * posterior * a.transpose() + q.as_matrix())
}

fn check_dim(net: &SensorNetwork, x: &CovMatrix) -> Result<()> {
    if x.dim() != net.state_dim() {
        return Err(Error::dims("covariance", net.state_dim(), x.dim()));
    }
    Ok(())
}

/// `f_0(X) = A X A^T + Q`.
pub fn lyapunov_step(net: &SensorNetwork, x: &CovMatrix) -> Result<CovMatrix> {
    check_dim(net, x)?;
    lyapunov(net.a(), net.q(), x)
}

/// `f_i(X)` for a non-empty subset `i`.
pub fn riccati_step(net: &SensorNetwork, i: SubsetId, x: &CovMatrix) -> Result<CovMatrix> {
    check_dim(net, x)?;
    let model = net.stacked_model(i)?;
    riccati(net.a(), net.q(), &model, x)
}

/// `f_i(X)` for any subset, dispatching to the Lyapunov map for the empty set.
pub fn rare_step(net: &SensorNetwork, i: SubsetId, x: &CovMatrix) -> Result<CovMatrix> {
    if i.is_empty() {
        lyapunov_step(net, x)
    } else {
        riccati_step(net, i, x)
    }
}

/// [`rare_step`] with the stacked observation models built once.
#[derive(Debug, Clone)]
pub struct MapFamily<'a> {
    net: &'a SensorNetwork,
    models: HashMap<SubsetId, StackedObsModel>,
}

impl<'a> MapFamily<'a> {
    pub fn new(net: &'a SensorNetwork, subsets: impl IntoIterator<Item = SubsetId>) -> Result<Self> {
        let mut models = HashMap::new();
        for i in subsets {
            if !i.is_empty() && !models.contains_key(&i) {
                models.insert(i, net.stacked_model(i)?);
            }
        }
        Ok(MapFamily { net, models })
    }

    pub fn for_schedule(net: &'a SensorNetwork, schedule: &Schedule) -> Result<Self> {
        Self::new(net, schedule.support())
    }

    pub fn network(&self) -> &SensorNetwork {
        self.net
    }

    pub fn apply(&self, i: SubsetId, x: &CovMatrix) -> Result<CovMatrix> {
        check_dim(self.net, x)?;
        if i.is_empty() {
            return lyapunov(self.net.a(), self.net.q(), x);
        }
        match self.models.get(&i) {
            Some(model) => riccati(self.net.a(), self.net.q(), model, x),
            None => riccati_step(self.net, i, x),
        }
    }
}

/// One sample path of the covariance recursion.
#[derive(Debug, Clone, PartialEq)]
pub struct RareTrajectory {
    pub initial: CovMatrix,
    /// `(I(t), P(t+1))` for `t = 0..T`.
    pub steps: Vec<(SubsetId, CovMatrix)>,
}

impl RareTrajectory {
    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    /// `P(t)` for `t` in `0..=T`.
    pub fn cov_at(&self, t: usize) -> &CovMatrix {
        if t == 0 {
            &self.initial
        } else {
            &self.steps[t - 1].1
        }
    }

    pub fn subsets(&self) -> impl Iterator<Item = SubsetId> + '_ {
        self.steps.iter().map(|(i, _)| *i)
    }
}

/// Replay a fixed subset sequence from `p0`.
pub fn replay(maps: &MapFamily<'_>, p0: &CovMatrix, subsets: impl IntoIterator<Item = SubsetId>) -> Result<RareTrajectory> {
    let mut steps = Vec::new();
    let mut p = p0.clone();
    for (t, i) in subsets.into_iter().enumerate() {
        p = maps.apply(i, &p).map_err(|e| e.at_step(t))?;
        steps.push((i, p.clone()));
    }
    Ok(RareTrajectory {
        initial: p0.clone(),
        steps,
    })
}

/// `P(t+1) = f_{I(t)}(P(t))` with `I(t)` drawn i.i.d. from the schedule.
pub fn rare_trajectory<R: Rng + ?Sized>(
    net: &SensorNetwork,
    schedule: &Schedule,
    p0: &CovMatrix,
    horizon: usize,
    rng: &mut R,
) -> Result<RareTrajectory> {
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    schedule.check_against(net)?;
    check_dim(net, p0)?;
    let maps = MapFamily::for_schedule(net, schedule)?;
    let subsets: Vec<SubsetId> = (0..horizon).map(|_| sample_subset(schedule, rng)).collect();
    replay(&maps, p0, subsets)
}

/// Fixed point `P*_i = f_i(P*_i)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FixedPoint {
    pub subset: SubsetId,
    #[serde(serialize_with = "serialize_cov")]
    pub value: CovMatrix,
    /// `||f_i(P*) - P*||`.
    pub residual: f64,
    pub iterations: usize,
    /// Step sizes `||X_{k+1} - X_k||` of the iteration.
    #[serde(skip)]
    pub steps: Vec<f64>,
}

pub(crate) fn serialize_cov<S: serde::Serializer>(c: &CovMatrix, s: S) -> std::result::Result<S::Ok, S::Error> {
    let n = c.dim();
    let rows: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| c.get(i, j)).collect()).collect();
    rows.serialize(s)
}

/// Iterate `X_{k+1} = f_i(X_k)` from `X_0 = Q` until
/// `||X_{k+1} - X_k|| <= tol (1 + ||X_k||)`.
pub fn dare_fixed_point(net: &SensorNetwork, i: SubsetId, tol: f64, max_iter: usize) -> Result<FixedPoint> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    let report = subset_detectability(net, i)?;
    if !report.detectable {
        return Err(Error::NotDetectable {
            subset: i,
            eigenvalues: report.offending_eigenvalues,
        });
    }
    if !is_stabilizable(net.a(), &net.q().psd_sqrt())? {
        return Err(Error::NotStabilizable);
    }
    let model = net.stacked_model(i)?;
    let f = |x: &CovMatrix| riccati(net.a(), net.q(), &model, x);
    let mut x = net.q().clone();
    let mut steps = Vec::new();
    let mut last = f64::INFINITY;
    for k in 1..=max_iter {
        let next = f(&x).map_err(|e| e.at_step(k))?;
        let step = distance(&next, &x)?;
        steps.push(step);
        let converged = step <= tol * (1.0 + spectral_norm(&x));
        x = next;
        last = step;
        if converged {
            let image = f(&x)?;
            let residual = distance(&image, &x)?;
            return Ok(FixedPoint {
                subset: i,
                value: x,
                residual,
                iterations: k,
                steps,
            });
        }
    }
    Err(Error::NoConvergence {
        iterations: max_iter,
        residual: last,
    })
}
