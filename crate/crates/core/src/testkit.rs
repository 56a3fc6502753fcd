//! Random instances for unit tests.

use nalgebra::DMatrix;
use rand::Rng;

use crate::matcone::{CovMatrix, SymMatrix};
use crate::sysmodel::{Sensor, SensorNetwork};

pub use crate::fixtures::{sys1d, sys2d};

pub fn random_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

/// `Z Z^T` for a random square `Z`.
pub fn random_psd<R: Rng>(rng: &mut R, dim: usize) -> CovMatrix {
    let z = random_matrix(rng, dim, dim);
    CovMatrix::from_matrix(&z * z.transpose()).unwrap()
}

/// Random positive definite matrix with eigenvalues bounded below by `floor`.
pub fn random_pd<R: Rng>(rng: &mut R, dim: usize, floor: f64) -> CovMatrix {
    let p = random_psd(rng, dim);
    CovMatrix::new(p.try_add(&SymMatrix::identity(dim).scaled(floor)).unwrap()).unwrap()
}

/// Network with up to `max_sensors` sensors of 1 or 2 rows each, `Q >> 0`.
pub fn random_network<R: Rng>(rng: &mut R, max_sensors: usize, max_dim: usize) -> SensorNetwork {
    let m = rng.random_range(1..=max_dim);
    let n = rng.random_range(1..=max_sensors);
    let a = random_matrix(rng, m, m) * 1.5;
    let q = random_pd(rng, m, 0.2);
    let p0 = random_psd(rng, m);
    let sensors = (0..n)
        .map(|_| {
            let rows = rng.random_range(1..=2);
            Sensor::new(random_matrix(rng, rows, m), random_pd(rng, rows, 0.1))
        })
        .collect();
    SensorNetwork::new(a, q, p0, sensors).unwrap()
}
