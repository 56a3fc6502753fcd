//! Structural diagnostics: detectability of stacked pairs `(C^i, A)`,
//! stabilizability of `(A, Q^{1/2})`, the detectable atom set `J(D)` and weak
//! detectability of a schedule.
//!
//! Detectability uses the PBH rank test: for every eigenvalue `λ` of `A` with
//! `|λ| >= 1`, `[A - λI; C]` must have full column rank. Ranks come from
//! singular values with threshold `M * σ_max * 1e-12`.

use nalgebra::{Complex, DMatrix};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::sysmodel::{Schedule, SensorNetwork, SubsetId};

/// Eigenvalues with modulus at least `1 - MARGINAL_BAND` count as unstable.
pub const MARGINAL_BAND: f64 = 1e-9;

const RANK_RTOL: f64 = 1e-12;
const EIG_MERGE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectabilityReport {
    pub detectable: bool,
    /// Unstable eigenvalues `(re, im)` at which the rank test fails.
    pub offending_eigenvalues: Vec<(f64, f64)>,
}

fn distinct_unstable_eigenvalues(a: &DMatrix<f64>) -> Vec<Complex<f64>> {
    let mut out: Vec<Complex<f64>> = Vec::new();
    for ev in a.complex_eigenvalues().iter() {
        if ev.norm() >= 1.0 - MARGINAL_BAND && !out.iter().any(|e| (e - ev).norm() <= EIG_MERGE_TOL) {
            out.push(*ev);
        }
    }
    out
}

pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues().iter().map(|e| e.norm()).fold(0.0, f64::max)
}

fn full_column_rank(m: DMatrix<Complex<f64>>) -> bool {
    let cols = m.ncols();
    let sv = m.singular_values();
    let smax = sv.iter().copied().fold(0.0, f64::max);
    let threshold = cols as f64 * smax * RANK_RTOL;
    sv.iter().filter(|&&s| s > threshold).count() == cols
}

/// PBH detectability of `(C, A)`.
pub fn is_detectable(c: &DMatrix<f64>, a: &DMatrix<f64>) -> Result<DetectabilityReport> {
    let m = a.nrows();
    if a.ncols() != m || m == 0 {
        return Err(Error::dims("A", "square matrix", format!("{}x{}", a.nrows(), a.ncols())));
    }
    if c.ncols() != m {
        return Err(Error::dims("columns of C", m, c.ncols()));
    }
    let p = c.nrows();
    let mut offending = Vec::new();
    for lambda in distinct_unstable_eigenvalues(a) {
        let mut stacked = DMatrix::<Complex<f64>>::zeros(m + p, m);
        for i in 0..m {
            for j in 0..m {
                let diag = if i == j { lambda } else { Complex::new(0.0, 0.0) };
                stacked[(i, j)] = Complex::new(a[(i, j)], 0.0) - diag;
            }
        }
        for i in 0..p {
            for j in 0..m {
                stacked[(m + i, j)] = Complex::new(c[(i, j)], 0.0);
            }
        }
        if !full_column_rank(stacked) {
            offending.push((lambda.re, lambda.im));
        }
    }
    Ok(DetectabilityReport {
        detectable: offending.is_empty(),
        offending_eigenvalues: offending,
    })
}

/// PBH stabilizability of `(A, B)`: `[A - λI, B]` has full row rank at every
/// unstable eigenvalue. Checked as detectability of the dual pair `(B^T, A^T)`.
pub fn is_stabilizable(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<bool> {
    if b.nrows() != a.nrows() {
        return Err(Error::dims("rows of B", a.nrows(), b.nrows()));
    }
    Ok(is_detectable(&b.transpose(), &a.transpose())?.detectable)
}

/// Standing assumptions on the signal: `(A, Q^{1/2})` stabilizable, `A`
/// unstable, `Q` positive definite. Violations are warnings only.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionReport {
    pub stabilizable: bool,
    pub a_unstable: bool,
    pub q_positive_definite: bool,
    pub spectral_radius: f64,
    pub q_min_eigenvalue: f64,
}

impl AssumptionReport {
    pub fn holds(&self) -> bool {
        self.stabilizable && self.a_unstable && self.q_positive_definite
    }

    pub fn warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        if !self.stabilizable {
            w.push("(A, Q^1/2) is not stabilizable".to_string());
        }
        if !self.a_unstable {
            w.push(format!("A is not unstable (spectral radius {})", self.spectral_radius));
        }
        if !self.q_positive_definite {
            w.push(format!("Q is not positive definite (min eigenvalue {:e})", self.q_min_eigenvalue));
        }
        w
    }
}

pub fn validate_assumption_e1(net: &SensorNetwork) -> AssumptionReport {
    let rho = spectral_radius(net.a());
    let q_min = net.q().min_eigenvalue();
    let stabilizable = is_stabilizable(net.a(), &net.q().psd_sqrt()).expect("Q has the dimension of A");
    AssumptionReport {
        stabilizable,
        a_unstable: rho > 1.0,
        q_positive_definite: q_min > 0.0,
        spectral_radius: rho,
        q_min_eigenvalue: q_min,
    }
}

/// Detectability of the stacked pair of one subset.
pub fn subset_detectability(net: &SensorNetwork, i: SubsetId) -> Result<DetectabilityReport> {
    let model = net.stacked_model(i)?;
    is_detectable(&model.c, net.a())
}

/// `J(D)`: non-empty atoms with positive probability whose stacked pair is detectable.
pub fn detectable_subsets(net: &SensorNetwork, schedule: &Schedule) -> Result<Vec<SubsetId>> {
    schedule.check_against(net)?;
    let mut out = Vec::new();
    for (id, p) in schedule.atoms() {
        if id.is_empty() || *p <= 0.0 {
            continue;
        }
        if subset_detectability(net, *id)?.detectable {
            out.push(*id);
        }
    }
    Ok(out)
}

pub fn is_weakly_detectable(net: &SensorNetwork, schedule: &Schedule) -> Result<bool> {
    Ok(!detectable_subsets(net, schedule)?.is_empty())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AtomReport {
    pub subset: SubsetId,
    pub prob: f64,
    /// `None` for the empty set.
    pub detectability: Option<DetectabilityReport>,
}

/// Everything the `analyze` front end prints.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisReport {
    pub state_dim: usize,
    pub sensors: usize,
    pub atoms: Vec<AtomReport>,
    pub detectable_set: Vec<SubsetId>,
    pub weakly_detectable: bool,
    pub assumption_e1: AssumptionReport,
    pub warnings: Vec<String>,
}

pub fn analyze(net: &SensorNetwork, schedule: &Schedule) -> Result<AnalysisReport> {
    schedule.check_against(net)?;
    let mut atoms = Vec::new();
    for (id, p) in schedule.atoms() {
        let detectability = if id.is_empty() {
            None
        } else {
            Some(subset_detectability(net, *id)?)
        };
        atoms.push(AtomReport {
            subset: *id,
            prob: *p,
            detectability,
        });
    }
    let detectable_set: Vec<SubsetId> = atoms
        .iter()
        .filter(|a| a.detectability.as_ref().is_some_and(|d| d.detectable))
        .map(|a| a.subset)
        .collect();
    let assumption_e1 = validate_assumption_e1(net);
    let mut warnings = assumption_e1.warnings();
    if detectable_set.is_empty() {
        warnings.push("schedule is not weakly detectable".into());
    }
    Ok(AnalysisReport {
        state_dim: net.state_dim(),
        sensors: net.n_sensors(),
        weakly_detectable: !detectable_set.is_empty(),
        atoms,
        detectable_set,
        assumption_e1,
        warnings,
    })
}
