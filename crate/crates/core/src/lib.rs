//! Kalman filtering over randomized sensor schedules.
//!
//! The conditional prediction error covariance of the optimal filter follows a
//! random algebraic Riccati recursion `P(t+1) = f_{I(t)}(P(t))`. This crate
//! provides the map family ([`riccati`]), structural diagnostics
//! ([`analysis`]), truncated enumeration of the invariant-measure support
//! ([`support`]) and a Monte Carlo harness ([`mckalman`]).

pub mod analysis;
pub mod config;
pub mod error;
pub mod fixtures;
pub mod matcone;
pub mod mckalman;
pub mod riccati;
pub mod rng;
pub mod support;
pub mod sysmodel;

#[cfg(test)]
mod testkit;

pub use error::{Error, ErrorKind, Result};
pub use matcone::{CovMatrix, SymMatrix, TOL_PSD};
pub use riccati::{FixedPoint, MapFamily, RareTrajectory};
pub use sysmodel::{Schedule, Sensor, SensorNetwork, SubsetId};
