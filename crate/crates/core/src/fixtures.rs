//! Small reference networks used by tests, benches and the CLI demo.

use nalgebra::DMatrix;

use crate::matcone::CovMatrix;
use crate::sysmodel::{Schedule, Sensor, SensorNetwork, SubsetId};

fn scalar_sensor(c: &[f64]) -> Sensor {
    Sensor::new(DMatrix::from_row_slice(1, c.len(), c), CovMatrix::identity(1))
}

/// Scalar system `A = 2, Q = 1, P0 = 1` with one sensor `C = 1, R = 1`.
pub fn sys1d() -> SensorNetwork {
    SensorNetwork::new(
        DMatrix::from_element(1, 1, 2.0),
        CovMatrix::identity(1),
        CovMatrix::identity(1),
        vec![scalar_sensor(&[1.0])],
    )
    .expect("valid scalar network")
}

/// `A = diag(2, 3)`, `Q = P0 = I`, sensor 1 sees the first mode and sensor 2 the second.
pub fn sys2d() -> SensorNetwork {
    SensorNetwork::new(
        DMatrix::from_diagonal(&nalgebra::dvector![2.0, 3.0]),
        CovMatrix::identity(2),
        CovMatrix::identity(2),
        vec![scalar_sensor(&[1.0, 0.0]), scalar_sensor(&[0.0, 1.0])],
    )
    .expect("valid 2-d network")
}

/// [`sys2d`] plus a third sensor `C = [1 1]` that sees both modes on its own.
pub fn sys2d_three_sensors() -> SensorNetwork {
    SensorNetwork::new(
        DMatrix::from_diagonal(&nalgebra::dvector![2.0, 3.0]),
        CovMatrix::identity(2),
        CovMatrix::identity(2),
        vec![scalar_sensor(&[1.0, 0.0]), scalar_sensor(&[0.0, 1.0]), scalar_sensor(&[1.0, 1.0])],
    )
    .expect("valid 2-d network")
}

/// `{∅: 1 - γ, {1}: γ}`.
pub fn intermittent(gamma: f64) -> Schedule {
    Schedule::bernoulli(gamma).expect("gamma in [0, 1]")
}

/// Schedule over `sys2d` given as `(sensors, prob)` pairs.
pub fn schedule(entries: &[(&[usize], f64)]) -> Schedule {
    Schedule::from_entries(
        entries
            .iter()
            .map(|(s, p)| (SubsetId::from_sensors(s).expect("valid sensors"), *p)),
    )
    .expect("valid schedule")
}
