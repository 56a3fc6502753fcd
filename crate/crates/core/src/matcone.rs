//! Symmetric matrices and the positive semidefinite cone.
//!
//! [`SymMatrix`] is an element of the space of symmetric `M x M` matrices and
//! [`CovMatrix`] an element of the PSD cone. Cone membership and the partial
//! order are decided by eigenvalues with a relative slack of
//! [`TOL_PSD`]` * (1 + ||X||)` so that round-off from long recursions does not
//! push iterates spuriously out of the cone.

use std::ops::Deref;

use nalgebra::{Cholesky, DMatrix};

use crate::error::{Error, Result};

/// Relative eigenvalue slack for cone membership and order tests.
pub const TOL_PSD: f64 = 1e-9;

/// Dense symmetric matrix. Symmetrized as `(X + X^T) / 2` on construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() == 0 || m.nrows() != m.ncols() {
            return Err(Error::dims(
                "symmetric matrix",
                "square matrix with dim >= 1",
                format!("{}x{}", m.nrows(), m.ncols()),
            ));
        }
        Ok(Self::symmetrized(m))
    }

    /// Row-major data of length `dim * dim`.
    pub fn from_row_slice(dim: usize, data: &[f64]) -> Result<Self> {
        if dim == 0 || data.len() != dim * dim {
            return Err(Error::dims("symmetric matrix data", dim * dim, data.len()));
        }
        Self::new(DMatrix::from_row_slice(dim, dim, data))
    }

    pub fn zeros(dim: usize) -> Self {
        assert!(dim >= 1, "dimension must be at least 1");
        SymMatrix(DMatrix::zeros(dim, dim))
    }

    pub fn identity(dim: usize) -> Self {
        assert!(dim >= 1, "dimension must be at least 1");
        SymMatrix(DMatrix::identity(dim, dim))
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        assert!(!diag.is_empty(), "dimension must be at least 1");
        SymMatrix(DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(diag)))
    }

    /// 1x1 matrix.
    pub fn scalar(value: f64) -> Self {
        SymMatrix(DMatrix::from_element(1, 1, value))
    }

    fn symmetrized(m: DMatrix<f64>) -> Self {
        let n = m.nrows();
        let mut out = m;
        for i in 0..n {
            for j in (i + 1)..n {
                let avg = 0.5 * (out[(i, j)] + out[(j, i)]);
                out[(i, j)] = avg;
                out[(j, i)] = avg;
            }
        }
        SymMatrix(out)
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.0[(row, col)]
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = match self.dim() {
            1 => vec![self.0[(0, 0)]],
            2 => {
                let (a, b, d) = (self.0[(0, 0)], self.0[(0, 1)], self.0[(1, 1)]);
                let mid = 0.5 * (a + d);
                let rad = (0.5 * (a - d)).hypot(b);
                // the eigenvalue of larger magnitude is free of cancellation;
                // the other one follows from the determinant
                let big = if mid >= 0.0 { mid + rad } else { mid - rad };
                let small = if big == 0.0 { 0.0 } else { (a * d - b * b) / big };
                vec![small, big]
            }
            _ => self.0.clone().symmetric_eigenvalues().iter().copied().collect(),
        };
        ev.sort_by(f64::total_cmp);
        ev
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues()[0]
    }

    pub fn max_eigenvalue(&self) -> f64 {
        *self.eigenvalues().last().expect("dim >= 1")
    }

    pub fn scaled(&self, factor: f64) -> SymMatrix {
        SymMatrix(&self.0 * factor)
    }

    pub fn try_add(&self, other: &SymMatrix) -> Result<SymMatrix> {
        same_dim(self, other, "matrix sum")?;
        Ok(SymMatrix(&self.0 + &other.0))
    }

    pub fn try_sub(&self, other: &SymMatrix) -> Result<SymMatrix> {
        same_dim(self, other, "matrix difference")?;
        Ok(SymMatrix(&self.0 - &other.0))
    }

    /// Upper triangle flattened column by column: (1,1), (1,2), (2,2), (1,3), ...
    pub fn upper_triangle_col_major(&self) -> Vec<f64> {
        let n = self.dim();
        let mut out = Vec::with_capacity(n * (n + 1) / 2);
        for c in 0..n {
            for r in 0..=c {
                out.push(self.0[(r, c)]);
            }
        }
        out
    }

    /// Symmetric PSD square root, negative eigenvalues clipped to zero.
    pub fn psd_sqrt(&self) -> DMatrix<f64> {
        if self.dim() == 1 {
            return DMatrix::from_element(1, 1, self.0[(0, 0)].max(0.0).sqrt());
        }
        let eig = self.0.clone().symmetric_eigen();
        let d = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
        &eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose()
    }
}

impl From<f64> for SymMatrix {
    fn from(value: f64) -> Self {
        SymMatrix::scalar(value)
    }
}

fn same_dim(x: &SymMatrix, y: &SymMatrix, context: &str) -> Result<()> {
    if x.dim() != y.dim() {
        return Err(Error::dims(context, x.dim(), y.dim()));
    }
    Ok(())
}

fn psd_slack(x: &SymMatrix) -> f64 {
    TOL_PSD * (1.0 + spectral_norm(x))
}

/// Element of the PSD cone, up to [`TOL_PSD`] slack.
#[derive(Debug, Clone, PartialEq)]
pub struct CovMatrix(SymMatrix);

impl CovMatrix {
    pub fn new(s: SymMatrix) -> Result<Self> {
        let min = s.min_eigenvalue();
        if min < -psd_slack(&s) {
            return Err(Error::NotPsd { min_eigenvalue: min });
        }
        Ok(CovMatrix(s))
    }

    pub fn from_matrix(m: DMatrix<f64>) -> Result<Self> {
        Self::new(SymMatrix::new(m)?)
    }

    pub fn from_row_slice(dim: usize, data: &[f64]) -> Result<Self> {
        Self::new(SymMatrix::from_row_slice(dim, data)?)
    }

    pub fn identity(dim: usize) -> Self {
        CovMatrix(SymMatrix::identity(dim))
    }

    pub fn zeros(dim: usize) -> Self {
        CovMatrix(SymMatrix::zeros(dim))
    }

    pub fn scalar(value: f64) -> Result<Self> {
        Self::new(SymMatrix::scalar(value))
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        Self::new(SymMatrix::from_diagonal(diag))
    }

    /// Accepts a map output: eigenvalues inside the slack band below zero are
    /// clipped to zero, anything further out is an error.
    pub fn from_map_output(m: DMatrix<f64>) -> Result<Self> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("map output".into()));
        }
        let s = SymMatrix::symmetrized(m);
        let ev = s.eigenvalues();
        let min = ev[0];
        if min >= 0.0 {
            return Ok(CovMatrix(s));
        }
        if min < -psd_slack(&s) {
            return Err(Error::NotPsd { min_eigenvalue: min });
        }
        log::debug!("clipping eigenvalue {min:e} of map output to zero");
        let eig = s.0.clone().symmetric_eigen();
        let d = eig.eigenvalues.map(|v| v.max(0.0));
        let clipped = &eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose();
        Ok(CovMatrix(SymMatrix::symmetrized(clipped)))
    }

    pub fn as_sym(&self) -> &SymMatrix {
        &self.0
    }

    pub fn into_sym(self) -> SymMatrix {
        self.0
    }

    /// `log det`, `-inf` for singular matrices.
    pub fn log_det(&self) -> f64 {
        self.eigenvalues()
            .iter()
            .map(|&v| if v > 0.0 { v.ln() } else { f64::NEG_INFINITY })
            .sum()
    }
}

impl Deref for CovMatrix {
    type Target = SymMatrix;

    fn deref(&self) -> &SymMatrix {
        &self.0
    }
}

impl TryFrom<SymMatrix> for CovMatrix {
    type Error = Error;

    fn try_from(value: SymMatrix) -> Result<Self> {
        CovMatrix::new(value)
    }
}

/// `X ⪯ Y`: min eigenvalue of `Y - X` is at least `-tol * (1 + ||Y - X||)`.
pub fn psd_order_leq(x: &SymMatrix, y: &SymMatrix, tol: f64) -> Result<bool> {
    if tol < 0.0 || tol.is_nan() {
        return Err(Error::InvalidArgument(format!("tolerance must be non-negative, got {tol}")));
    }
    let diff = y.try_sub(x)?;
    let ev = diff.eigenvalues();
    let norm = ev[0].abs().max(ev[ev.len() - 1].abs());
    Ok(ev[0] >= -tol * (1.0 + norm))
}

/// `X ≪ Y` with an explicit margin: min eigenvalue of `Y - X` is at least `margin`.
pub fn strict_order_ll(x: &SymMatrix, y: &SymMatrix, margin: f64) -> Result<bool> {
    let diff = y.try_sub(x)?;
    Ok(diff.min_eigenvalue() >= margin)
}

/// Induced 2-norm, the largest absolute eigenvalue.
pub fn spectral_norm(x: &SymMatrix) -> f64 {
    let ev = x.eigenvalues();
    ev[0].abs().max(ev[ev.len() - 1].abs())
}

/// Spectral-norm distance `||X - Y||`.
pub fn distance(x: &SymMatrix, y: &SymMatrix) -> Result<f64> {
    Ok(spectral_norm(&x.try_sub(y)?))
}

/// `S^{-1} B` through a Cholesky factorization of `S`.
pub fn chol_solve(s: &CovMatrix, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if b.nrows() != s.dim() {
        return Err(Error::dims("chol_solve right-hand side rows", s.dim(), b.nrows()));
    }
    if s.dim() == 1 {
        let v = s.get(0, 0);
        if v <= 0.0 || !v.is_finite() {
            return Err(Error::NotPositiveDefinite {
                what: "chol_solve operand".into(),
                min_eigenvalue: v,
            });
        }
        return Ok(b / v);
    }
    match Cholesky::new(s.as_matrix().clone()) {
        Some(chol) => Ok(chol.solve(b)),
        None => Err(Error::NotPositiveDefinite {
            what: "chol_solve operand".into(),
            min_eigenvalue: s.min_eigenvalue(),
        }),
    }
}

/// Lattice point of the upper triangle rounded to multiples of `delta`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct QuantKey(Vec<u64>);

pub fn quantized_key(x: &SymMatrix, delta: f64) -> QuantKey {
    assert!(delta > 0.0, "quantization step must be positive");
    let n = x.dim();
    let mut key = Vec::with_capacity(n * (n + 1) / 2);
    for i in 0..n {
        for j in i..n {
            let q = (x.get(i, j) / delta).round();
            // -0.0 and 0.0 must share a key
            let q = if q == 0.0 { 0.0 } else { q };
            key.push(q.to_bits());
        }
    }
    QuantKey(key)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
        DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    fn random_psd(rng: &mut ChaCha8Rng, dim: usize) -> SymMatrix {
        let z = random_matrix(rng, dim, dim);
        SymMatrix::new(&z * z.transpose()).unwrap()
    }

    #[test]
    fn construction_symmetrizes() {
        let s = SymMatrix::from_row_slice(2, &[1.0, 2.0, 4.0, 3.0]).unwrap();
        assert_eq!(s.get(0, 1), 3.0);
        assert_eq!(s.get(1, 0), 3.0);
        assert!(SymMatrix::new(DMatrix::zeros(2, 3)).is_err());
        assert!(SymMatrix::new(DMatrix::zeros(0, 0)).is_err());
    }

    #[test]
    fn cov_rejects_indefinite() {
        assert!(CovMatrix::from_diagonal(&[1.0, -0.5]).is_err());
        assert!(CovMatrix::from_diagonal(&[1.0, -1e-12]).is_ok());
    }

    #[test]
    fn map_output_clips_small_negative_eigenvalues() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1e-12]);
        let c = CovMatrix::from_map_output(m).unwrap();
        assert!(c.min_eigenvalue() >= 0.0);
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1e-3]);
        assert!(matches!(CovMatrix::from_map_output(bad), Err(Error::NotPsd { .. })));
    }

    #[test]
    fn order_leq_examples() {
        let z = SymMatrix::zeros(2);
        let i = SymMatrix::identity(2);
        assert!(psd_order_leq(&z, &i, 0.0).unwrap());
        assert!(psd_order_leq(&i, &i, 0.0).unwrap());
        // Y - X = diag(-1, 1)
        let x = SymMatrix::from_diagonal(&[2.0, 0.0]);
        let y = SymMatrix::from_diagonal(&[1.0, 1.0]);
        assert!(!psd_order_leq(&x, &y, 1e-12).unwrap());
        assert!(psd_order_leq(&z, &SymMatrix::identity(3), 0.0).is_err());
        assert!(psd_order_leq(&z, &i, -1.0).is_err());
    }

    #[test]
    fn strict_order_examples() {
        let z = SymMatrix::zeros(2);
        let i = SymMatrix::identity(2);
        assert!(strict_order_ll(&z, &i, 0.5).unwrap());
        assert!(!strict_order_ll(&z, &SymMatrix::from_diagonal(&[1.0, 0.0]), 1e-6).unwrap());
        assert!(strict_order_ll(&i, &i.scaled(3.0), 1.5).unwrap());
        assert!(strict_order_ll(&z, &SymMatrix::identity(3), 0.1).is_err());
    }

    #[test]
    fn spectral_norm_examples() {
        assert_eq!(spectral_norm(&SymMatrix::identity(3)), 1.0);
        assert_eq!(spectral_norm(&SymMatrix::from_diagonal(&[2.0, -5.0])), 5.0);
        let s = SymMatrix::from_row_slice(2, &[2.0, 1.0, 1.0, 2.0]).unwrap();
        assert_relative_eq!(spectral_norm(&s), 3.0, epsilon = 1e-14);
    }

    #[test]
    fn chol_solve_examples() {
        let b = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(chol_solve(&CovMatrix::identity(2), &b).unwrap(), b);
        let four = CovMatrix::scalar(4.0).unwrap();
        let r = chol_solve(&four, &DMatrix::from_element(1, 1, 2.0)).unwrap();
        assert_eq!(r[(0, 0)], 0.5);
        let s = CovMatrix::from_diagonal(&[2.0, 8.0]).unwrap();
        let inv = chol_solve(&s, &DMatrix::identity(2, 2)).unwrap();
        assert_relative_eq!(inv, DMatrix::from_diagonal(&nalgebra::dvector![0.5, 0.125]), epsilon = 1e-15);
    }

    #[test]
    fn chol_solve_reports_min_eigenvalue_on_singular_input() {
        let s = CovMatrix::from_diagonal(&[1.0, 0.0]).unwrap();
        match chol_solve(&s, &DMatrix::identity(2, 2)) {
            Err(Error::NotPositiveDefinite { min_eigenvalue, .. }) => assert_eq!(min_eigenvalue, 0.0),
            other => panic!("expected factorization failure, got {other:?}"),
        }
    }

    #[test]
    fn quantized_key_examples() {
        let z = SymMatrix::zeros(2);
        assert_eq!(quantized_key(&z, 1e-8), quantized_key(&z.scaled(-1.0), 1e-8));
        assert_eq!(
            quantized_key(&SymMatrix::from_diagonal(&[1.00000004, 2.0]), 1e-7),
            quantized_key(&SymMatrix::from_diagonal(&[1.0, 2.0]), 1e-7)
        );
        let x = SymMatrix::from_diagonal(&[0.3, 0.7]);
        let mut e11 = DMatrix::zeros(2, 2);
        e11[(0, 0)] = 1e-3 * 1e-5;
        let bumped = SymMatrix::new(x.as_matrix() + e11).unwrap();
        assert_eq!(quantized_key(&x, 1e-5), quantized_key(&bumped, 1e-5));
        let far = SymMatrix::from_diagonal(&[0.3 + 2.5e-5, 0.7]);
        assert_ne!(quantized_key(&x, 1e-5), quantized_key(&far, 1e-5));
    }

    #[test]
    fn psd_sum_dominates() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..500 {
            let dim = rng.random_range(1..=6);
            let x = random_psd(&mut rng, dim);
            let y = random_psd(&mut rng, dim);
            let sum = x.try_add(&y).unwrap();
            assert!(psd_order_leq(&x, &sum, TOL_PSD).unwrap());
        }
    }

    #[test]
    fn order_is_transitive_on_constructed_chains() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..200 {
            let dim = rng.random_range(1..=5);
            let x = random_psd(&mut rng, dim).scaled(-1.0);
            let y = x.try_add(&random_psd(&mut rng, dim)).unwrap();
            let z = y.try_add(&random_psd(&mut rng, dim)).unwrap();
            assert!(psd_order_leq(&x, &y, TOL_PSD).unwrap());
            assert!(psd_order_leq(&y, &z, TOL_PSD).unwrap());
            assert!(psd_order_leq(&x, &z, TOL_PSD).unwrap());
        }
    }

    #[test]
    fn spectral_norm_matches_rayleigh_quotient_maximum() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..100 {
            let dim = rng.random_range(1..=5);
            let z = random_matrix(&mut rng, dim, dim);
            let s = SymMatrix::new(z).unwrap();
            // Rayleigh quotient at the eigenvectors of a full decomposition.
            let eig = s.as_matrix().clone().symmetric_eigen();
            let best = (0..dim)
                .map(|k| {
                    let v = eig.eigenvectors.column(k);
                    (v.transpose() * s.as_matrix() * v)[(0, 0)].abs()
                })
                .fold(0.0, f64::max);
            assert!((spectral_norm(&s) - best).abs() <= 1e-9);
            // and no random unit vector exceeds it
            for _ in 0..20 {
                let v = random_matrix(&mut rng, dim, 1).normalize();
                let q = (v.transpose() * s.as_matrix() * &v)[(0, 0)].abs();
                assert!(q <= spectral_norm(&s) + 1e-12);
            }
        }
    }

    #[test]
    fn chol_solve_round_trip_on_well_conditioned_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for _ in 0..200 {
            let dim = rng.random_range(1..=6);
            // S = U diag(d) U^T with d in [1e-6, 1]
            let q = random_matrix(&mut rng, dim, dim).qr().q();
            let d = nalgebra::DVector::from_fn(dim, |_, _| 10f64.powf(rng.random_range(-6.0..0.0)));
            let s = CovMatrix::from_matrix(&q * DMatrix::from_diagonal(&d) * q.transpose()).unwrap();
            let b = random_matrix(&mut rng, dim, 3);
            let x = chol_solve(&s, &b).unwrap();
            let resid = (s.as_matrix() * x - &b).norm();
            assert!(resid <= 1e-10 * (1.0 + b.norm()), "residual {resid}");
        }
    }
}
